from __future__ import annotations

import os
import sys
import tempfile
import unittest
from unittest.mock import patch

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from planner.case_study import (
    CASE_STUDY_COLUMNS,
    CaseStudyConfig,
    CaseStudyResult,
    replay_case_study,
)
from planner.exceptions import InvalidConfig


class TestCaseStudyReplay(unittest.TestCase):
    result: CaseStudyResult

    @classmethod
    def setUpClass(cls) -> None:
        cls.result = replay_case_study()

    def test_stage_order(self) -> None:
        """Six stages in the configured order."""
        names = [stage.name for stage in self.result.stages]
        self.assertEqual(len(names), 6)
        self.assertEqual(names[0], "Roofline baseline")
        self.assertEqual(names[-1], "Shard embedding")

    def test_roofline_baseline(self) -> None:
        """One accelerator needs about 2707 days per epoch."""
        report = self.result.stages[0].report
        self.assertGreater(report.days_per_epoch, 2707 * 0.9)
        self.assertLess(report.days_per_epoch, 2707 * 1.1)
        self.assertEqual(report.n_accel, 1)
        self.assertEqual(report.global_batch, 128)

    def test_projection_speedup(self) -> None:
        """The projected model steps about 11.7 times faster than the published row."""
        self.assertGreater(self.result.reduction, 11.7 * 0.9)
        self.assertLess(self.result.reduction, 11.7 * 1.1)
        self.assertEqual(self.result.published_reduction, 11.7)

    def test_cache_aware(self) -> None:
        """Tiled traffic drops utilization to between 40% and 55%."""
        baseline, cache_aware = self.result.stages[0].report, self.result.stages[1].report
        self.assertGreater(cache_aware.utilization, 0.40)
        self.assertLess(cache_aware.utilization, 0.55)
        self.assertGreater(cache_aware.days_per_epoch, baseline.days_per_epoch)

    def test_data_parallel(self) -> None:
        """1024 workers finish an epoch in 4 to 8 days at 28% to 40% utilization."""
        report = self.result.stage("Data parallel x1024").report
        self.assertEqual(report.n_accel, 1024)
        self.assertEqual(report.global_batch, 131072)
        self.assertGreater(report.days_per_epoch, 4)
        self.assertLess(report.days_per_epoch, 8)
        self.assertGreater(report.utilization, 0.28)
        self.assertLess(report.utilization, 0.40)
        self.assertTrue(report.over_capacity)

    def test_halving_workers(self) -> None:
        """512 workers take longer per epoch than 1024."""
        wide = self.result.stage("Data parallel x1024").report
        narrow = self.result.stage("Data parallel x512").report
        self.assertGreater(narrow.days_per_epoch, wide.days_per_epoch)
        self.assertEqual(narrow.global_batch, 65536)

    def test_layer_parallel(self) -> None:
        """Four pipelined layer groups run at 12% to 18% utilization."""
        report = self.result.stage("Layer parallel x4").report
        self.assertEqual(report.n_accel, 2048)
        self.assertEqual(len(report.footprints_gb), 4)
        self.assertGreater(report.utilization, 0.12)
        self.assertLess(report.utilization, 0.18)

    def test_sharded_embedding_fits(self) -> None:
        """After sharding the embedding every device fits in 32 GB."""
        layered = self.result.stage("Layer parallel x4").report
        sharded = self.result.stage("Shard embedding").report
        self.assertLessEqual(sharded.max_footprint_gb, 32.0)
        self.assertFalse(sharded.over_capacity)
        self.assertAlmostEqual(sum(sharded.footprints_gb), sum(layered.footprints_gb))
        self.assertEqual(sharded.step_seconds, layered.step_seconds)

    def assertFootprintsNear(self, stage: str, tolerance: float = 0.15) -> None:
        result = self.result.stage(stage)
        computed, published = result.report.footprints_gb, result.paper["footprint_gb"]
        self.assertEqual(len(computed), len(published))
        for device, (ours, theirs) in enumerate(zip(computed, published)):
            with self.subTest(device=device):
                self.assertLess(abs(ours - theirs) / theirs, tolerance)

    def test_layer_parallel_footprints(self) -> None:
        """Each pipeline device holds within 15% of the published 60, 17, 17 and 32 GB."""
        self.assertFootprintsNear("Layer parallel x4")

    def test_embedding_device_holds_optimizer_state(self) -> None:
        """The embedding device carries the table and two Adam slots."""
        footprints = self.result.stage("Layer parallel x4").report.footprints_gb
        table_gb = 800000 * 5632 * 4 / 1e9
        self.assertGreater(footprints[0], 3 * table_gb)
        self.assertEqual(max(footprints), footprints[0])

    def test_sharded_footprints(self) -> None:
        """Sharding levels the devices to within 15% of the published 32, 31, 31 and 32 GB."""
        self.assertFootprintsNear("Shard embedding")

    def test_cache_aware_days(self) -> None:
        """Cache-aware timing needs between 3700 and 4700 days per epoch."""
        report = self.result.stage("Cache-aware").report
        self.assertGreater(report.days_per_epoch, 3700)
        self.assertLess(report.days_per_epoch, 4700)

    def test_table_has_paper_columns(self) -> None:
        """The stage table lists computed values next to the published ones."""
        table = self.result.table()
        self.assertEqual(list(table.columns), CASE_STUDY_COLUMNS)
        self.assertEqual(len(table), 6)
        self.assertEqual(table.loc[5, "paper_footprint_gb"], "{32.0, 31.0, 31.0, 32.0}")
        self.assertEqual(table.loc[0, "paper_days_per_epoch"], 2707)

    def test_unknown_stage(self) -> None:
        """Looking up a stage that was not run raises KeyError."""
        with self.assertRaises(KeyError):
            self.result.stage("Tensor parallel")


class TestCaseStudyConfig(unittest.TestCase):
    def test_shipped_study(self) -> None:
        """The shipped study projects the word LM at 128 samples per worker."""
        cfg = CaseStudyConfig.default_config()
        self.assertEqual(cfg.version, "1.0")
        self.assertEqual(cfg.model.hidden, 20992)
        self.assertEqual(cfg.model.subbatch, 128)
        self.assertEqual(cfg.tile_policy, {"operands": 3, "concurrent_tiles": 160})
        self.assertEqual(cfg.published_reduction, 11.7)
        self.assertEqual(cfg.layer_optimizers, {"embedding": "adam", "output": "momentum"})

    def test_missing_file_falls_back(self) -> None:
        """An empty asset directory logs a warning and uses built-in defaults."""
        with tempfile.TemporaryDirectory() as tmp:
            with patch.dict(os.environ, {"CAPACITY_ASSET_DIR": tmp}):
                with self.assertLogs("planner.case_study", level="WARNING"):
                    cfg = CaseStudyConfig.default_config()
        self.assertEqual(cfg.version, "fallback")
        self.assertEqual(cfg.model, CaseStudyConfig.default_config().model)
        self.assertEqual(
            [s["kind"] for s in cfg.stages],
            [s["kind"] for s in CaseStudyConfig.default_config().stages],
        )

    def test_explicit_path_must_load(self) -> None:
        """A broken explicit file raises."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "study.json")
            with open(path, "w", encoding="utf-8") as f:
                f.write("{not json")
            with self.assertRaises(InvalidConfig):
                CaseStudyConfig.default_config(path)

    def test_unknown_stage_kind(self) -> None:
        """Stage kinds are validated."""
        with self.assertRaises(InvalidConfig):
            CaseStudyConfig.from_dict(
                {
                    "model": {"domain": "word_lm", "hidden": 64},
                    "data_size": 1e6,
                    "tokens_per_sample": 4,
                    "stages": [{"name": "x", "kind": "tensor_parallel"}],
                }
            )

    def test_shard_needs_earlier_stage(self) -> None:
        """Sharding cannot be the first stage."""
        cfg = CaseStudyConfig.from_dict(
            {
                "model": {"domain": "word_lm", "hidden": 64, "vocab": 100, "seq_len": 4},
                "data_size": 1e6,
                "tokens_per_sample": 4,
                "stages": [{"name": "shard", "kind": "shard_embedding", "shards": 2}],
            }
        )
        with self.assertRaises(InvalidConfig):
            replay_case_study(cfg)

    def test_small_study(self) -> None:
        """A small model runs through every stage kind."""
        cfg = CaseStudyConfig.from_dict(
            {
                "model": {"domain": "word_lm", "hidden": 128, "vocab": 500, "seq_len": 4, "subbatch": 16},
                "data_size": 1e8,
                "tokens_per_sample": 4,
                "stages": [
                    {"name": "roofline", "kind": "roofline"},
                    {"name": "cache", "kind": "cache_aware"},
                    {"name": "dp", "kind": "data_parallel", "plan": {"subbatch": 16, "data_parallel": 4}},
                    {
                        "name": "lp",
                        "kind": "layer_parallel",
                        "plan": {"subbatch": 16, "data_parallel": 4, "layer_parallel": 2},
                    },
                    {"name": "shard", "kind": "shard_embedding", "shards": 2},
                ],
            }
        )
        result = replay_case_study(cfg)
        self.assertEqual([s.name for s in result.stages], ["roofline", "cache", "dp", "lp", "shard"])
        self.assertIsNone(result.published_reduction)
        self.assertTrue(result.table()["paper_days_per_epoch"].isna().all())


if __name__ == "__main__":
    unittest.main()
