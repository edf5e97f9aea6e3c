from __future__ import annotations

import os
import sys
import unittest

import numpy as np
import pandas as pd

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from planner.analyzers import analyze
from planner.autodiff import derive_training_graph
from planner.exceptions import InsufficientPoints, InvalidConfig
from planner.graph import ComputeGraph, OpKind, TensorKind
from planner.model_config import ModelConfig
from planner.modelzoo import build
from planner.sweeps import SWEEP_COLUMNS, asymptotic_intensity, fit_requirement_models, sweep
from planner.symexpr import symbols

HIDDEN = [64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384]


def small_word_lm() -> ModelConfig:
    return ModelConfig(domain="word_lm", hidden=64, vocab=100, seq_len=4, subbatch=16)


class TestSweep(unittest.TestCase):
    def test_symbol_axis(self) -> None:
        """Rebinding h gives one row per value, in order, indexed by the value."""
        table = sweep(small_word_lm(), "h", HIDDEN[:3], footprint=False)
        self.assertEqual(list(table.columns), SWEEP_COLUMNS)
        self.assertEqual(list(table.index), HIDDEN[:3])
        self.assertEqual(table.index.name, "h")
        self.assertTrue(table["p"].is_monotonic_increasing)
        self.assertTrue(table["footprint_bytes"].isna().all())

    def test_single_value(self) -> None:
        """One value gives one row."""
        self.assertEqual(len(sweep(small_word_lm(), "h", [128], footprint=False)), 1)

    def test_structural_axis(self) -> None:
        """Sweeping layers rebuilds the model and grows the parameter count."""
        table = sweep(small_word_lm(), "layers", [1, 2, 3])
        self.assertTrue(table["p"].is_monotonic_increasing)
        self.assertTrue(table["footprint_bytes"].is_monotonic_increasing)

    def test_unknown_axis(self) -> None:
        """Axes that are neither symbols nor model options are rejected."""
        with self.assertRaises(InvalidConfig):
            sweep(small_word_lm(), "depth", [1, 2])

    def test_parallel_footprints_match_serial(self) -> None:
        """Worker count does not change the footprints."""
        serial = sweep(small_word_lm(), "h", HIDDEN[:3])
        parallel = sweep(small_word_lm(), "h", HIDDEN[:3], n_jobs=2)
        pd.testing.assert_frame_equal(serial, parallel)

    def test_intensity_grows_with_size(self) -> None:
        """At fixed subbatch, operational intensity rises with parameters."""
        table = sweep(small_word_lm(), "h", HIDDEN, footprint=False)
        self.assertTrue(np.all(np.diff(table["intensity"].to_numpy()) > 0))


# model, swept symbol and sizes large enough to reach the intensity plateau
ZOO_SWEEPS = {
    "word_lm": (small_word_lm(), "h", [2**k for k in range(6, 21, 2)]),
    "char_lm": (
        ModelConfig(domain="char_lm", hidden=64, layers=1, vocab=20, seq_len=5, subbatch=2, rhn_depth=3),
        "h",
        [2**k for k in range(6, 21, 2)],
    ),
    "nmt": (
        ModelConfig(domain="nmt", hidden=64, layers=2, vocab=40, seq_len=6, subbatch=2),
        "h",
        [2**k for k in range(6, 21, 2)],
    ),
    "speech": (
        ModelConfig(
            domain="speech", hidden=64, layers=4, vocab=10, seq_len=16, subbatch=2,
            target_len=5, decoder_layers=1, features=6,
        ),
        "h",
        [2**k for k in range(6, 21, 2)],
    ),
    "image": (ModelConfig(domain="image", resnet_depth=18, subbatch=2, image_size=64), "w", [2**k for k in range(0, 13, 2)]),
}


class TestZooSweeps(unittest.TestCase):
    def test_intensity_reaches_its_asymptote(self) -> None:
        """Every zoo model's intensity ends within 5% of its limit in the swept size."""
        for domain, (cfg, axis, values) in ZOO_SWEEPS.items():
            with self.subTest(domain=domain):
                report = analyze(derive_training_graph(build(cfg)))
                limit = asymptotic_intensity(report, axis)
                self.assertTrue(np.isfinite(limit))
                table = sweep(cfg, axis, values, footprint=False)
                last = float(table["intensity"].iloc[-1])
                self.assertLess(abs(last - limit) / limit, 0.05)

    def test_footprint_grows_monotonically(self) -> None:
        """Every zoo model's minimal footprint rises with the swept size."""
        for domain, (cfg, axis, values) in ZOO_SWEEPS.items():
            with self.subTest(domain=domain):
                table = sweep(cfg, axis, values)
                self.assertTrue(np.all(np.diff(table["footprint_bytes"].to_numpy()) > 0))
                self.assertTrue(table["p"].is_monotonic_increasing)

    def test_matmul_intensity_limit(self) -> None:
        """One b x h by h x h product tends to b*h/(2h + 4b) FLOP/B, so b/2 as h grows."""
        (h,) = symbols("h")
        graph = ComputeGraph("mm", {"b": 8, "h": 64})
        graph.add_tensor("x", [8, h], TensorKind.INPUT)
        graph.add_tensor("w", [h, h], TensorKind.WEIGHT)
        graph.add_tensor("y", [8, h], TensorKind.OUTPUT)
        graph.add_op("mm", OpKind.MATMUL, ["x", "w"], ["y"])
        self.assertAlmostEqual(asymptotic_intensity(analyze(graph), "h"), 4.0)


class TestRequirementFits(unittest.TestCase):
    def test_linear_growth(self) -> None:
        """FLOPs per sample and footprint grow linearly in parameters."""
        table = sweep(small_word_lm(), "h", HIDDEN)
        fit = fit_requirement_models(table, subbatch=16)
        self.assertGreater(fit.gamma, 0)
        self.assertGreater(fit.delta, 0)
        self.assertGreater(fit.r2["flops"], 0.99)
        self.assertGreater(fit.r2["bytes"], 0.99)
        tail = fit_requirement_models(table, subbatch=16, min_params=1e7)
        self.assertLess(tail.max_residual["flops"], 0.05)
        self.assertLess(tail.max_residual["footprint"], 0.10)

    def test_without_footprints(self) -> None:
        """A sweep without footprints leaves delta undefined."""
        table = sweep(small_word_lm(), "h", HIDDEN, footprint=False)
        self.assertTrue(np.isnan(fit_requirement_models(table, subbatch=16).delta))

    def test_too_few_points(self) -> None:
        """Fits need five points across two decades of parameters."""
        with self.assertRaises(InsufficientPoints):
            fit_requirement_models(sweep(small_word_lm(), "h", HIDDEN[:4], footprint=False), 16)
        with self.assertRaises(InsufficientPoints):
            fit_requirement_models(sweep(small_word_lm(), "h", [64, 72, 80, 88, 96], footprint=False), 16)


if __name__ == "__main__":
    unittest.main()
