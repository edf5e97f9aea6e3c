from __future__ import annotations

import os
import sys
import unittest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from planner.analyzers import BREAKDOWN_COLUMNS, algorithmic_io, analyze, parameter_count
from planner.autodiff import derive_training_graph
from planner.exceptions import NonPositiveValue
from planner.graph import ComputeGraph, OpKind, TensorKind, disjoint_union
from planner.symexpr import symbols

b, d, h = symbols("b d h")


def square_matmul() -> ComputeGraph:
    g = ComputeGraph("square", {"b": 32, "h": 256})
    g.add_tensor("x", [b, h], TensorKind.INPUT)
    g.add_tensor("w", [h, h], TensorKind.WEIGHT)
    g.add_tensor("y", [b, h], TensorKind.OUTPUT)
    g.add_op("mm", OpKind.MATMUL, ["x", "w"], ["y"])
    return g


class TestAnalyze(unittest.TestCase):
    def test_single_matmul_totals(self) -> None:
        """MatMul(b,h,h) costs 2bh^2 FLOPs over 4(bh + h^2 + bh) bytes."""
        report = analyze(square_matmul())
        self.assertEqual(report.total_flops, 2 * b * h**2)
        self.assertEqual(report.total_bytes, 4 * (b * h + h**2 + b * h))
        self.assertEqual(report.parameter_count, h**2)

    def test_additivity(self) -> None:
        """Two independent copies cost exactly twice one copy."""
        single = analyze(square_matmul())
        pair = analyze(disjoint_union("pair", [square_matmul(), square_matmul()]))
        self.assertEqual(pair.total_flops, 2 * single.total_flops)
        self.assertEqual(pair.total_bytes, 2 * single.total_bytes)

    def test_intensity(self) -> None:
        """Intensity is FLOPs over bytes after binding."""
        report = analyze(square_matmul())
        binding = {"b": 32, "h": 256}
        expected = (2 * 32 * 256**2) / (4 * (2 * 32 * 256 + 256**2))
        self.assertAlmostEqual(report.op_intensity(binding), expected)
        # symbol defaults bind anything left out
        self.assertAlmostEqual(report.op_intensity(), expected)

    def test_intensity_needs_bytes(self) -> None:
        """A graph that touches no bytes has no intensity."""
        with self.assertRaises(NonPositiveValue):
            analyze(ComputeGraph("empty")).op_intensity({})

    def test_breakdown_table(self) -> None:
        """The per-op table lists every op with evaluated costs."""
        step = derive_training_graph(square_matmul())
        report = analyze(step)
        table = report.breakdown({"b": 2, "h": 4})
        self.assertEqual(list(table.columns), BREAKDOWN_COLUMNS)
        self.assertEqual(len(table), len(step.graph.ops))
        self.assertAlmostEqual(table["flops"].sum(), report.flops({"b": 2, "h": 4}))

    def test_share_by_kind(self) -> None:
        """MatMul share of training FLOPs dominates at large sizes."""
        report = analyze(derive_training_graph(square_matmul()))
        share = report.share_by(lambda c: c.kind is OpKind.MATMUL, {"b": 1024, "h": 1024})
        self.assertGreater(share, 0.99)
        self.assertLess(share, 1.0)
        backward = report.share_by(lambda c: c.gradient_of == "mm", {"b": 8, "h": 8})
        self.assertAlmostEqual(backward, 2 * 2 * 8**3 / (6 * 8**3 + 2 * 8**2))

    def test_report_document(self) -> None:
        """The JSON document carries symbolic and evaluated totals."""
        document = analyze(square_matmul()).to_dict({"b": 2, "h": 3})
        self.assertEqual(document["flops"], "2*b*h^2")
        self.assertEqual(document["evaluated"]["flops"], 36.0)
        self.assertEqual(document["evaluated"]["parameters"], 9.0)
        self.assertEqual(len(document["ops"]), 1)
        self.assertNotIn("evaluated", analyze(square_matmul()).to_dict())


class TestAlgorithmicIO(unittest.TestCase):
    def test_single_input(self) -> None:
        """One fp32 b x d input reads 4bd bytes."""
        g = ComputeGraph("io")
        g.add_tensor("x", [b, d], TensorKind.INPUT)
        g.add_tensor("y", [b, d])
        g.add_op("copy", OpKind.IDENTITY, ["x"], ["y"])
        g.mark_io_input("x")
        self.assertEqual(algorithmic_io(g, {"b": 3, "d": 5}), 60)
        self.assertEqual(analyze(g).io_bytes, 4 * b * d)

    def test_proportional_to_batch(self) -> None:
        """Doubling the batch doubles algorithmic IO."""
        g = square_matmul()
        g.mark_io_input("x")
        g.mark_io_output("y")
        small = algorithmic_io(g, {"b": 16, "h": 64})
        self.assertEqual(algorithmic_io(g, {"b": 32, "h": 64}), 2 * small)

    def test_no_designated_inputs(self) -> None:
        """Without designated tensors there is no IO."""
        self.assertEqual(algorithmic_io(square_matmul(), {"b": 1, "h": 1}), 0)

    def test_parameter_count(self) -> None:
        """Parameters are the elements of every weight tensor."""
        self.assertEqual(parameter_count(derive_training_graph(square_matmul())), h**2)


if __name__ == "__main__":
    unittest.main()
