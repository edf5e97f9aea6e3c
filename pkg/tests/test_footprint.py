from __future__ import annotations

import os
import random
import sys
import unittest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from planner.autodiff import MOMENTUM, derive_training_graph
from planner.exceptions import InvalidConfig, TooLargeForExhaustive
from planner.footprint import (
    FootprintMode,
    footprint_lower_bound,
    footprint_of_order,
    min_footprint,
    persistent_bytes,
)
from planner.graph import ComputeGraph, OpKind, TensorKind
from planner.symexpr import symbols

b, h = symbols("b h")


def byte_chain(length: int = 3, size: int = 100) -> ComputeGraph:
    g = ComputeGraph("chain")
    g.add_tensor("t0", [size], TensorKind.INPUT, dtype_bytes=1)
    for index in range(length):
        g.add_tensor(f"t{index + 1}", [size], dtype_bytes=1)
        g.add_op(f"op{index}", OpKind.IDENTITY, [f"t{index}"], [f"t{index + 1}"])
    return g


def random_dag(rng: random.Random, op_count: int) -> ComputeGraph:
    g = ComputeGraph("random")
    g.add_tensor("in", [rng.randint(1, 9) * 10], TensorKind.INPUT, dtype_bytes=1)
    available = ["in"]
    for index in range(op_count):
        inputs = rng.sample(available, k=min(len(available), rng.randint(1, 2)))
        output = f"t{index}"
        g.add_tensor(output, [rng.randint(1, 9) * 10], dtype_bytes=1)
        g.add_op(f"op{index}", OpKind.POINTWISE, inputs, [output])
        available.append(output)
    return g


def mlp() -> ComputeGraph:
    g = ComputeGraph("mlp")
    g.add_tensor("x", [b, h], TensorKind.INPUT)
    g.add_tensor("w1", [h, h], TensorKind.WEIGHT)
    g.add_tensor("w2", [h, h], TensorKind.WEIGHT)
    g.add_tensor("a1", [b, h])
    g.add_tensor("r1", [b, h])
    g.add_tensor("y", [b, h], TensorKind.OUTPUT)
    g.add_op("mm1", OpKind.MATMUL, ["x", "w1"], ["a1"])
    g.add_op("relu", OpKind.POINTWISE, ["a1"], ["r1"])
    g.add_op("mm2", OpKind.MATMUL, ["r1", "w2"], ["y"])
    return g


class TestFootprintExamples(unittest.TestCase):
    def test_chain_peak(self) -> None:
        """Three chained ops over 100-byte tensors peak at 200 bytes."""
        g = byte_chain()
        self.assertEqual(min_footprint(g, {}), 200)
        self.assertEqual(min_footprint(g, {}, FootprintMode.EXHAUSTIVE), 200)

    def test_single_op(self) -> None:
        """One op with a 100-byte input and 50-byte output needs 150 bytes."""
        g = ComputeGraph("single")
        g.add_tensor("x", [100], TensorKind.INPUT, dtype_bytes=1)
        g.add_tensor("y", [50], dtype_bytes=1)
        g.add_op("op", OpKind.IDENTITY, ["x"], ["y"])
        self.assertEqual(min_footprint(g, {}), 150)
        self.assertEqual(min_footprint(g, {}, "exhaustive"), 150)

    def test_graph_inputs_are_transient(self) -> None:
        """A graph input is allocated at its first consumer and freed after its last."""
        g = ComputeGraph("late_input")
        g.add_tensor("t0", [100], TensorKind.INPUT, dtype_bytes=1)
        g.add_tensor("t1", [100], dtype_bytes=1)
        g.add_tensor("t2", [10], dtype_bytes=1)
        g.add_tensor("late", [10], TensorKind.INPUT, dtype_bytes=1)
        g.add_tensor("t3", [10], dtype_bytes=1)
        g.add_op("op0", OpKind.IDENTITY, ["t0"], ["t1"])
        g.add_op("op1", OpKind.IDENTITY, ["t1"], ["t2"])
        g.add_op("op2", OpKind.POINTWISE, ["t2", "late"], ["t3"])
        self.assertEqual(min_footprint(g, {}), 200)
        self.assertEqual(min_footprint(g, {}, FootprintMode.EXHAUSTIVE), 200)
        self.assertEqual(footprint_of_order(g, {}, ["op0", "op1", "op2"]), 200)

    def test_empty_graph(self) -> None:
        """A graph without ops or weights needs nothing."""
        self.assertEqual(min_footprint(ComputeGraph("empty"), {}), 0)

    def test_fan_out_tree(self) -> None:
        """Sibling consumers free their outputs immediately."""
        g = ComputeGraph("tree")
        g.add_tensor("x", [100], TensorKind.INPUT, dtype_bytes=1)
        for name in ["a", "b", "c"]:
            g.add_tensor(name, [100], dtype_bytes=1)
        g.add_op("A", OpKind.IDENTITY, ["x"], ["a"])
        g.add_op("B", OpKind.IDENTITY, ["a"], ["b"])
        g.add_op("C", OpKind.IDENTITY, ["a"], ["c"])
        self.assertEqual(min_footprint(g, {}), 200)
        self.assertEqual(min_footprint(g, {}, FootprintMode.EXHAUSTIVE), 200)

    def test_fan_in_tree(self) -> None:
        """A join keeps both branches live while it writes its output."""
        g = ComputeGraph("join")
        for name in ["x1", "x2"]:
            g.add_tensor(name, [100], TensorKind.INPUT, dtype_bytes=1)
        g.add_tensor("a", [100], dtype_bytes=1)
        g.add_tensor("b", [100], dtype_bytes=1)
        g.add_tensor("c", [200], dtype_bytes=1)
        g.add_op("A", OpKind.IDENTITY, ["x1"], ["a"])
        g.add_op("B", OpKind.IDENTITY, ["x2"], ["b"])
        g.add_op("C", OpKind.CONCAT, ["a", "b"], ["c"])
        self.assertEqual(min_footprint(g, {}), 400)
        self.assertEqual(min_footprint(g, {}, FootprintMode.EXHAUSTIVE), 400)

    def test_explicit_order(self) -> None:
        """Running both branches before the join costs more."""
        g = ComputeGraph("branches")
        g.add_tensor("x", [10], TensorKind.INPUT, dtype_bytes=1)
        for name, size in [("big", 100), ("small", 50), ("big2", 10), ("small2", 10)]:
            g.add_tensor(name, [size], dtype_bytes=1)
        g.add_op("A", OpKind.IDENTITY, ["x"], ["big"])
        g.add_op("B", OpKind.POINTWISE, ["big"], ["big2"])
        g.add_op("C", OpKind.IDENTITY, ["x"], ["small"])
        g.add_op("D", OpKind.POINTWISE, ["small"], ["small2"])
        eager = footprint_of_order(g, {}, ["A", "C", "B", "D"])
        depth_first = footprint_of_order(g, {}, ["A", "B", "C", "D"])
        self.assertGreater(eager, depth_first)
        self.assertEqual(depth_first, 120)

    def test_unknown_mode(self) -> None:
        """Modes other than heuristic and exhaustive are rejected."""
        with self.assertRaises(InvalidConfig):
            min_footprint(byte_chain(), {}, "optimal")

    def test_exhaustive_limit(self) -> None:
        """Exhaustive search refuses graphs above twelve ops."""
        with self.assertRaises(TooLargeForExhaustive):
            min_footprint(byte_chain(13), {}, FootprintMode.EXHAUSTIVE)
        self.assertEqual(min_footprint(byte_chain(12), {}, FootprintMode.EXHAUSTIVE), 200)


class TestFootprintProperties(unittest.TestCase):
    def test_heuristic_bounds_on_small_dags(self) -> None:
        """heuristic >= exhaustive >= widest single op on random small DAGs."""
        rng = random.Random(2024)
        for trial in range(40):
            g = random_dag(rng, rng.randint(1, 6))
            heuristic = min_footprint(g, {})
            exhaustive = min_footprint(g, {}, FootprintMode.EXHAUSTIVE)
            bound = footprint_lower_bound(g, {})
            self.assertGreaterEqual(heuristic, exhaustive, f"trial {trial}")
            self.assertGreaterEqual(exhaustive, bound, f"trial {trial}")

    def test_chains_are_exact(self) -> None:
        """On chains the greedy order is optimal."""
        for length in range(1, 7):
            g = byte_chain(length, size=40)
            self.assertEqual(
                min_footprint(g, {}),
                min_footprint(g, {}, FootprintMode.EXHAUSTIVE),
            )

    def test_in_place_reduces_pointwise_outputs(self) -> None:
        """In-place Identity and Pointwise ops allocate no output."""
        g = byte_chain()
        self.assertEqual(min_footprint(g, {}, in_place=True), 100)

    def test_unrolled_activations_scale(self) -> None:
        """Analytic unrolling keeps q copies of every per-step activation."""
        (q,) = symbols("q")
        g = ComputeGraph("unrolled")
        g.add_tensor("x", [b], TensorKind.INPUT, dtype_bytes=1)
        g.add_tensor("y", [b], dtype_bytes=1)
        g.add_op("step", OpKind.IDENTITY, ["x"], ["y"], unroll_count=q)
        self.assertEqual(min_footprint(g, {"b": 10, "q": 5}), 100)


class TestTrainingFootprint(unittest.TestCase):
    def test_persistent_weights_gradients_and_state(self) -> None:
        """SGD keeps weight and gradient per parameter; momentum adds one state slot."""
        step = derive_training_graph(mlp())
        binding = {"b": 2, "h": 8}
        self.assertEqual(persistent_bytes(step, binding), 2 * 2 * 4 * 64)
        self.assertEqual(persistent_bytes(derive_training_graph(mlp(), MOMENTUM), binding), 2 * 3 * 4 * 64)
        self.assertEqual(persistent_bytes(mlp(), binding), 2 * 4 * 64)

    def test_training_needs_more_than_forward(self) -> None:
        """The training step never fits in less memory than inference."""
        binding = {"b": 16, "h": 32}
        forward = min_footprint(mlp(), binding)
        training = min_footprint(derive_training_graph(mlp()), binding)
        self.assertGreaterEqual(training, forward)

    def test_monotone_in_batch(self) -> None:
        """Doubling the subbatch never shrinks the footprint."""
        step = derive_training_graph(mlp())
        for size in [1, 2, 4, 8, 16]:
            small = min_footprint(step, {"b": size, "h": 16})
            large = min_footprint(step, {"b": 2 * size, "h": 16})
            self.assertGreaterEqual(large, small)

    def test_subgraph_footprint(self) -> None:
        """Restricting to some ops treats foreign tensors as inputs."""
        g = byte_chain(3)
        self.assertEqual(min_footprint(g, {}, op_ids=["op2"]), 200)


if __name__ == "__main__":
    unittest.main()
