"""Step-time estimates on a target accelerator.

The optimistic estimate applies one Roofline bound to the whole step.
The cache-aware estimate replaces the algorithmic bytes of every MatMul
and Conv2D that does not fit in cache with the traffic of a square-tiled
implementation and sums per-op Roofline times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd

from planner.accelerator_config import AcceleratorConfig, TilePolicy
from planner.analyzers import CostReport, analyze
from planner.autodiff import SGD, OptimizerSpec, TrainingStepGraph, derive_training_graph
from planner.exceptions import EmptyCandidates
from planner.graph import ComputeGraph, OpKind, OpNode
from planner.model_config import ModelConfig
from planner.op_catalog import conv_gemm_dims, matmul_dims, op_alg_bytes, op_alg_flops
from planner.symexpr import Binding

logger = logging.getLogger(__name__)

DEFAULT_SUBBATCH_CANDIDATES = tuple(2**i for i in range(3, 11))
SUBBATCH_TOLERANCE = 0.05
# ops are still memory-bound at the ridge crossing itself
RIDGE_MARGIN = 1.5
OP_TIME_COLUMNS = [
    "op_id",
    "kind",
    "gradient_of",
    "flops",
    "algorithmic_bytes",
    "modeled_bytes",
    "compute_seconds",
    "memory_seconds",
    "seconds",
]


@dataclass(frozen=True)
class StepTimeReport:
    step_seconds: float
    bound: str
    flops: float
    algorithmic_bytes: float
    modeled_bytes: float
    utilization: float

    def to_dict(self) -> Dict[str, Union[float, str]]:
        return {
            "step_seconds": self.step_seconds,
            "bound": self.bound,
            "flops": self.flops,
            "algorithmic_bytes": self.algorithmic_bytes,
            "modeled_bytes": self.modeled_bytes,
            "utilization": self.utilization,
        }


@dataclass(frozen=True)
class SubbatchChoice:
    subbatch: int
    per_sample_seconds: Dict[int, float]
    ridge_subbatch: Optional[int]

    @property
    def ridge_ratio(self) -> Optional[float]:
        if self.ridge_subbatch is None:
            return None
        return self.subbatch / self.ridge_subbatch


def ridge_point(acc: AcceleratorConfig) -> Tuple[float, float]:
    """Raw and achievable FLOP/B at which the Roofline turns compute-bound."""
    return (
        acc.peak_flops / acc.mem_bandwidth,
        acc.achievable_flops / acc.achievable_bandwidth,
    )


def roofline_step_time(
    flops: float,
    accessed_bytes: float,
    acc: AcceleratorConfig,
    modeled_bytes: Optional[float] = None,
) -> StepTimeReport:
    """Time bounded by achievable compute or achievable bandwidth."""
    traffic = accessed_bytes if modeled_bytes is None else modeled_bytes
    compute = flops / acc.achievable_flops
    memory = traffic / acc.achievable_bandwidth
    seconds = max(compute, memory)
    return StepTimeReport(
        step_seconds=seconds,
        bound="compute" if compute >= memory else "memory",
        flops=flops,
        algorithmic_bytes=accessed_bytes,
        modeled_bytes=traffic,
        utilization=flops / (seconds * acc.peak_flops) if seconds > 0 else 0.0,
    )


def cache_aware_matmul_bytes(
    m: float,
    n: float,
    k: float,
    dtype_bytes: int,
    cache_bytes: float,
    policy: TilePolicy = TilePolicy(),
) -> float:
    """Memory traffic of one ``m x k`` by ``k x n`` product.

    Products whose three operands fit in cache move their algorithmic
    bytes. Otherwise both inputs are restreamed once per tile of the
    other dimension and the output is read and written once.
    """
    algorithmic = dtype_bytes * (m * k + k * n + m * n)
    tile = policy.tile_side(cache_bytes, dtype_bytes)
    if algorithmic <= cache_bytes:
        return algorithmic
    return dtype_bytes * (
        m * k * math.ceil(n / tile) + k * n * math.ceil(m / tile) + 2 * m * n
    )


def _gemm_shape(graph: ComputeGraph, op: OpNode, binding: Binding) -> Tuple[float, float, float, float]:
    if op.kind is OpKind.MATMUL:
        batch, m, n, k = matmul_dims(graph, op)
        return batch.evaluate(binding), m.evaluate(binding), n.evaluate(binding), k.evaluate(binding)
    m, n, k = conv_gemm_dims(graph, op, binding)
    return 1.0, m, n, k


def modeled_op_bytes(
    graph: ComputeGraph,
    op: OpNode,
    binding: Binding,
    acc: AcceleratorConfig,
) -> Tuple[float, float]:
    """Algorithmic and cache-aware bytes of one op."""
    algorithmic = op_alg_bytes(graph, op).evaluate(binding)
    if op.kind not in (OpKind.MATMUL, OpKind.CONV2D):
        return algorithmic, algorithmic
    batch, m, n, k = _gemm_shape(graph, op, binding)
    dtype = graph.tensor(op.outputs[0]).dtype_bytes
    if dtype * (m * k + k * n + m * n) <= acc.cache_bytes:
        return algorithmic, algorithmic
    copies = op.multiplicity.evaluate(binding) if op.multiplicity is not None else 1.0
    traffic = batch * copies * cache_aware_matmul_bytes(
        m, n, k, dtype, acc.cache_bytes, acc.tile_policy
    )
    return algorithmic, max(traffic, algorithmic)


def op_times(
    g: Union[ComputeGraph, TrainingStepGraph, CostReport],
    acc: AcceleratorConfig,
    binding: Binding | None = None,
    cache_aware: bool = True,
) -> pd.DataFrame:
    """Per-op Roofline time, one row per op in graph order."""
    graph = g.graph if isinstance(g, (TrainingStepGraph, CostReport)) else g
    if not graph.frozen:
        graph.validate()
    resolved = graph.resolve_binding(binding)
    rows: List[Dict[str, object]] = []
    for op in graph.ops.values():
        flops = op_alg_flops(graph, op).evaluate(resolved)
        if cache_aware:
            algorithmic, modeled = modeled_op_bytes(graph, op, resolved, acc)
        else:
            algorithmic = modeled = op_alg_bytes(graph, op).evaluate(resolved)
        compute = flops / acc.achievable_flops
        memory = modeled / acc.achievable_bandwidth
        rows.append(
            {
                "op_id": op.id,
                "kind": op.kind.value,
                "gradient_of": op.attrs.get("gradient_of"),
                "flops": flops,
                "algorithmic_bytes": algorithmic,
                "modeled_bytes": modeled,
                "compute_seconds": compute,
                "memory_seconds": memory,
                "seconds": max(compute, memory),
            }
        )
    return pd.DataFrame(rows, columns=OP_TIME_COLUMNS)


def summarize_op_times(times: pd.DataFrame, acc: AcceleratorConfig) -> StepTimeReport:
    """Sum per-op times into one step report."""
    seconds = float(times["seconds"].sum())
    flops = float(times["flops"].sum())
    compute = float(times["compute_seconds"].sum())
    memory = float(times["memory_seconds"].sum())
    return StepTimeReport(
        step_seconds=seconds,
        bound="compute" if compute >= memory else "memory",
        flops=flops,
        algorithmic_bytes=float(times["algorithmic_bytes"].sum()),
        modeled_bytes=float(times["modeled_bytes"].sum()),
        utilization=flops / (seconds * acc.peak_flops) if seconds > 0 else 0.0,
    )


def cache_aware_step_time(
    report: Union[CostReport, ComputeGraph, TrainingStepGraph],
    acc: AcceleratorConfig,
    binding: Binding | None = None,
) -> StepTimeReport:
    """Sum of per-op Roofline times with tiled MatMul and Conv2D traffic."""
    times = op_times(report, acc, binding, cache_aware=True)
    result = summarize_op_times(times, acc)
    logger.debug(
        "Cache-aware step: %.3f s, %.1f%% utilization", result.step_seconds, 100 * result.utilization
    )
    return result


def graph_step_time(
    report: CostReport,
    acc: AcceleratorConfig,
    binding: Binding | None = None,
) -> StepTimeReport:
    """Whole-graph Roofline time from algorithmic totals."""
    return roofline_step_time(report.flops(binding), report.bytes(binding), acc)


def _cost_report(
    cfg: ModelConfig,
    builder: Callable[[ModelConfig], ComputeGraph],
    training: bool,
    optimizer: OptimizerSpec,
) -> CostReport:
    graph = builder(cfg)
    if training:
        return analyze(derive_training_graph(graph, optimizer))
    return analyze(graph)


def ridge_crossing_subbatch(
    report: CostReport,
    acc: AcceleratorConfig,
    candidates: Iterable[int] = DEFAULT_SUBBATCH_CANDIDATES,
    symbol: str = "b",
) -> Optional[int]:
    """Smallest candidate subbatch whose graph intensity reaches the achievable ridge point."""
    _, ridge = ridge_point(acc)
    for candidate in sorted(candidates):
        if report.op_intensity({symbol: candidate}) >= ridge:
            return candidate
    return None


def choose_subbatch(
    builder: Callable[[ModelConfig], ComputeGraph],
    cfg: ModelConfig,
    acc: AcceleratorConfig,
    candidates: Sequence[int] = DEFAULT_SUBBATCH_CANDIDATES,
    tolerance: float = SUBBATCH_TOLERANCE,
    training: bool = True,
    optimizer: OptimizerSpec = SGD,
    symbol: str = "b",
    ridge_margin: float = RIDGE_MARGIN,
) -> SubbatchChoice:
    """Smallest subbatch within ``tolerance`` of the best per-sample step time.

    Candidates below ``ridge_margin`` times the ridge-crossing subbatch
    are skipped while a larger near-best candidate exists; a margin of
    zero keeps the plain per-sample rule.
    """
    if not candidates:
        raise EmptyCandidates("no subbatch candidates given")
    report = _cost_report(cfg, builder, training, optimizer)
    per_sample: Dict[int, float] = {}
    for candidate in sorted(candidates):
        step = cache_aware_step_time(report, acc, {symbol: candidate})
        per_sample[candidate] = step.step_seconds / candidate
        logger.debug("Subbatch %d: %.3e s per sample", candidate, per_sample[candidate])
    best = min(per_sample.values())
    near_best = [b for b in sorted(per_sample) if per_sample[b] <= (1 + tolerance) * best]
    ridge = ridge_crossing_subbatch(report, acc, candidates, symbol)
    floor = ridge_margin * ridge if ridge is not None else 0.0
    chosen = next((b for b in near_best if b >= floor), near_best[-1])
    logger.info("Chose subbatch %d for %s (ridge crossing at %s)", chosen, cfg.domain, ridge)
    return SubbatchChoice(subbatch=chosen, per_sample_seconds=per_sample, ridge_subbatch=ridge)
