"""Graph-level algorithmic cost: FLOPs, bytes, intensity, IO and footprint."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Tuple, Union

import pandas as pd

from planner.autodiff import TrainingStepGraph, as_compute_graph
from planner.exceptions import NonPositiveValue
from planner.footprint import FootprintMode, min_footprint
from planner.graph import ComputeGraph, OpKind, OpNode, unroll_of
from planner.op_catalog import op_alg_bytes, op_alg_flops, stacked_shape
from planner.symexpr import Binding, DimExpr, render, total

logger = logging.getLogger(__name__)

BREAKDOWN_COLUMNS = ["op_id", "kind", "flops", "bytes", "intensity"]


@dataclass(frozen=True)
class OpCost:
    op_id: str
    kind: OpKind
    flops: DimExpr
    bytes: DimExpr
    gradient_of: Optional[str] = None


@dataclass(frozen=True)
class CostReport:
    graph: ComputeGraph
    total_flops: DimExpr
    total_bytes: DimExpr
    io_bytes: DimExpr
    parameter_count: DimExpr
    matrix_parameter_count: DimExpr
    per_op: Tuple[OpCost, ...]

    @property
    def graph_name(self) -> str:
        return self.graph.name

    def _bind(self, binding: Binding | None) -> Dict[str, Any]:
        return self.graph.resolve_binding(binding)

    def flops(self, binding: Binding | None = None) -> float:
        return self.total_flops.evaluate(self._bind(binding))

    def bytes(self, binding: Binding | None = None) -> float:
        return self.total_bytes.evaluate(self._bind(binding))

    def op_intensity(self, binding: Binding | None = None) -> float:
        """FLOPs per byte accessed; defined only for a positive byte count."""
        resolved = self._bind(binding)
        accessed = self.total_bytes.evaluate_exact(resolved)
        if accessed <= 0:
            raise NonPositiveValue(f"Graph '{self.graph_name}' accesses no bytes")
        return float(self.total_flops.evaluate_exact(resolved) / accessed)

    def footprint_bytes(
        self,
        binding: Binding | None = None,
        mode: Union[FootprintMode, str] = FootprintMode.HEURISTIC,
        in_place: bool = False,
    ) -> float:
        return min_footprint(self.graph, self._bind(binding), mode, in_place)

    def breakdown(self, binding: Binding | None = None) -> pd.DataFrame:
        """One row per op with evaluated FLOPs, bytes and intensity."""
        resolved = self._bind(binding)
        rows = []
        for cost in self.per_op:
            flops = cost.flops.evaluate(resolved)
            accessed = cost.bytes.evaluate(resolved)
            rows.append(
                {
                    "op_id": cost.op_id,
                    "kind": cost.kind.value,
                    "flops": flops,
                    "bytes": accessed,
                    "intensity": flops / accessed if accessed > 0 else float("nan"),
                }
            )
        return pd.DataFrame(rows, columns=BREAKDOWN_COLUMNS)

    def share_by(
        self,
        predicate: Callable[[OpCost], bool],
        binding: Binding | None = None,
        metric: str = "flops",
    ) -> float:
        """Fraction of total FLOPs (or bytes) contributed by matching ops."""
        resolved = self._bind(binding)
        selected = total(
            getattr(cost, metric) for cost in self.per_op if predicate(cost)
        ).evaluate_exact(resolved)
        whole = getattr(self, f"total_{metric}").evaluate_exact(resolved)
        if whole == 0:
            return 0.0
        return float(selected / whole)

    def to_dict(self, binding: Binding | None = None) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            "graph": self.graph_name,
            "flops": render(self.total_flops),
            "bytes": render(self.total_bytes),
            "io_bytes": render(self.io_bytes),
            "parameters": render(self.parameter_count),
            "matrix_parameters": render(self.matrix_parameter_count),
        }
        if binding is not None:
            resolved = self._bind(binding)
            document["binding"] = {str(k): float(v) for k, v in sorted(resolved.items())}
            document["evaluated"] = {
                "flops": self.flops(resolved),
                "bytes": self.bytes(resolved),
                "intensity": self.op_intensity(resolved),
                "io_bytes": self.io_bytes.evaluate(resolved),
                "parameters": self.parameter_count.evaluate(resolved),
                "footprint_bytes": self.footprint_bytes(resolved),
            }
            document["ops"] = self.breakdown(resolved).to_dict(orient="records")
        return document


def parameter_count(g: Union[ComputeGraph, TrainingStepGraph]) -> DimExpr:
    return total(w.num_elements for w in as_compute_graph(g).weights())


def matrix_parameter_count(g: Union[ComputeGraph, TrainingStepGraph]) -> DimExpr:
    """Parameters of the weight matrices alone, leaving out bias and scale vectors.

    A stacked weight is judged by the per-layer shape its consumers see.
    """
    graph = as_compute_graph(g)
    matrices = []
    for weight in graph.weights():
        ranks = [len(stacked_shape(graph, graph.op(c), weight.id)) for c in graph.consumers(weight.id)]
        if min(ranks, default=len(weight.shape)) >= 2:
            matrices.append(weight.num_elements)
    return total(matrices)


def io_bytes_expr(g: Union[ComputeGraph, TrainingStepGraph]) -> DimExpr:
    graph = as_compute_graph(g)
    designated = list(dict.fromkeys(graph.io_inputs + graph.io_outputs))
    return total(graph.tensor(t).bytes * unroll_of(graph, t) for t in designated)


def algorithmic_io(g: Union[ComputeGraph, TrainingStepGraph], binding: Binding | None = None) -> float:
    """Bytes of the designated input and output tensors of one step."""
    graph = as_compute_graph(g)
    return io_bytes_expr(graph).evaluate(graph.resolve_binding(binding))


def _op_cost(graph: ComputeGraph, op: OpNode, weights_per_timestep: bool) -> OpCost:
    return OpCost(
        op_id=op.id,
        kind=op.kind,
        flops=op_alg_flops(graph, op),
        bytes=op_alg_bytes(graph, op, weights_per_timestep),
        gradient_of=op.attrs.get("gradient_of"),
    )


def analyze(
    g: Union[ComputeGraph, TrainingStepGraph],
    weights_per_timestep: bool = False,
) -> CostReport:
    """Symbolic totals for a validated graph."""
    graph = as_compute_graph(g)
    if not graph.frozen:
        graph.validate()
    per_op = tuple(_op_cost(graph, op, weights_per_timestep) for op in graph.ops.values())
    report = CostReport(
        graph=graph,
        total_flops=total(c.flops for c in per_op),
        total_bytes=total(c.bytes for c in per_op),
        io_bytes=io_bytes_expr(graph),
        parameter_count=parameter_count(graph),
        matrix_parameter_count=matrix_parameter_count(graph),
        per_op=per_op,
    )
    logger.debug("Analyzed %s: flops %s", graph.name, render(report.total_flops))
    return report
