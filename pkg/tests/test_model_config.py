from __future__ import annotations

import json
import os
import sys
import tempfile
import unittest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from planner.exceptions import InvalidConfig
from planner.model_config import DOMAINS, ModelConfig, layer_blocks


class TestModelConfig(unittest.TestCase):
    def test_shipped_defaults(self) -> None:
        """Every domain loads from the shipped constants file."""
        for domain in DOMAINS:
            cfg = ModelConfig.default_config(domain)
            self.assertEqual(cfg.domain, domain)
        self.assertEqual(ModelConfig.default_config("word_lm").vocab, 800000)
        self.assertEqual(ModelConfig.default_config("char_lm").seq_len, 150)
        self.assertEqual(ModelConfig.default_config("speech").seq_len, 300)

    def test_validation(self) -> None:
        """Non-positive sizes, oversized projections and bad depths are rejected."""
        with self.assertRaises(InvalidConfig):
            ModelConfig(domain="word_lm", hidden=0)
        with self.assertRaises(InvalidConfig):
            ModelConfig(domain="word_lm", hidden=64, projection=128)
        with self.assertRaises(InvalidConfig):
            ModelConfig(domain="image", resnet_depth=77)
        with self.assertRaises(InvalidConfig):
            ModelConfig(domain="speech", layers=2, pool_after=(1, 2))
        with self.assertRaises(InvalidConfig):
            ModelConfig(domain="video")

    def test_overrides(self) -> None:
        """Overrides replace fields and reject unknown names."""
        cfg = ModelConfig.fallback("nmt").with_overrides(hidden=256, pool_after=[1])
        self.assertEqual(cfg.hidden, 256)
        self.assertEqual(cfg.pool_after, (1,))
        with self.assertRaises(InvalidConfig):
            cfg.with_overrides(depth=3)

    def test_derived_properties(self) -> None:
        """Decoder length and depth default to the encoder's."""
        cfg = ModelConfig(domain="nmt", seq_len=20, layers=3)
        self.assertEqual(cfg.decoder_len, 20)
        self.assertEqual(cfg.decoder_depth, 3)
        self.assertEqual(cfg.embedding_dim, cfg.hidden)

    def test_missing_file_falls_back(self) -> None:
        """Without an explicit path a missing file yields fallback values."""
        with tempfile.TemporaryDirectory() as tmp:
            os.environ["CAPACITY_ASSET_DIR"] = tmp
            try:
                with self.assertLogs("planner.model_config", level="WARNING"):
                    cfg = ModelConfig.default_config("word_lm")
            finally:
                del os.environ["CAPACITY_ASSET_DIR"]
        self.assertEqual(cfg, ModelConfig.fallback("word_lm"))

    def test_explicit_path_must_load(self) -> None:
        """A broken explicit file is an error, not a fallback."""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "constants.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump({"domains": {}}, f)
            with self.assertRaises(InvalidConfig):
                ModelConfig.default_config("nmt", path)

    def test_layer_blocks(self) -> None:
        """Depth picks block counts and block type."""
        self.assertEqual(layer_blocks(50), ((3, 4, 6, 3), True))
        self.assertEqual(layer_blocks(34), ((3, 4, 6, 3), False))
        with self.assertRaises(InvalidConfig):
            layer_blocks(20)


if __name__ == "__main__":
    unittest.main()
