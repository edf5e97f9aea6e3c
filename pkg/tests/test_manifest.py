from __future__ import annotations

import json
import os
import sys
import tempfile
import unittest

import pandas as pd

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from planner import __version__
from planner.manifest import RunManifest, read_manifest_digest, write_csv, write_json


class TestRunManifest(unittest.TestCase):
    def test_digest_ignores_key_order(self) -> None:
        """Equal configurations hash equally whatever their key order."""
        a = RunManifest(command="sweep", config={"axis": "h", "values": [1, 2]})
        b = RunManifest(command="sweep", config={"values": [1, 2], "axis": "h"})
        self.assertEqual(a.digest, b.digest)
        self.assertEqual(len(a.digest), 64)

    def test_digest_tracks_content(self) -> None:
        """Any change to command, config or outputs changes the hash."""
        base = RunManifest(command="sweep", config={"axis": "h"}, outputs=("a.csv",))
        self.assertNotEqual(base.digest, RunManifest(command="project", config={"axis": "h"}, outputs=("a.csv",)).digest)
        self.assertNotEqual(base.digest, RunManifest(command="sweep", config={"axis": "b"}, outputs=("a.csv",)).digest)
        self.assertNotEqual(base.digest, RunManifest(command="sweep", config={"axis": "h"}).digest)

    def test_tool_version(self) -> None:
        """Manifests record the package version."""
        self.assertEqual(RunManifest(command="plan").to_dict()["tool_version"], __version__)


class TestArtifacts(unittest.TestCase):
    def test_csv_carries_manifest(self) -> None:
        """CSV files start with the manifest hash and still parse as tables."""
        table = pd.DataFrame({"p": [1.0, 2.0], "flops": [3.0, 4.0]})
        manifest = RunManifest(command="sweep", config={"axis": "h"})
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "out.csv")
            write_csv(table, path, manifest)
            self.assertEqual(read_manifest_digest(path), manifest.digest)
            pd.testing.assert_frame_equal(pd.read_csv(path, comment="#"), table)

    def test_identical_manifests_give_identical_files(self) -> None:
        """Writing the same table twice gives byte-identical files."""
        table = pd.DataFrame({"p": [1.0, 2.0]})
        with tempfile.TemporaryDirectory() as tmp:
            first, second = os.path.join(tmp, "a.csv"), os.path.join(tmp, "b.csv")
            write_csv(table, first, RunManifest(command="sweep"))
            write_csv(table, second, RunManifest(command="sweep"))
            with open(first, "rb") as f, open(second, "rb") as g:
                self.assertEqual(f.read(), g.read())

    def test_json_carries_manifest(self) -> None:
        """JSON artifacts embed the manifest and its hash."""
        manifest = RunManifest(command="analyze", config={"model": "word_lm"})
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "report.json")
            write_json({"flops": "2*b*h^2"}, path, manifest)
            with open(path, encoding="utf-8") as f:
                document = json.load(f)
            self.assertEqual(document["manifest_sha256"], manifest.digest)
            self.assertEqual(document["manifest"]["command"], "analyze")
            self.assertEqual(read_manifest_digest(path), manifest.digest)

    def test_plain_file_has_no_digest(self) -> None:
        """Files without a manifest report none."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "plain.csv")
            with open(path, "w", encoding="utf-8") as f:
                f.write("a,b\n1,2\n")
            self.assertIsNone(read_manifest_digest(path))


if __name__ == "__main__":
    unittest.main()
