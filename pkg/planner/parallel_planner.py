"""Data-parallel, layer-parallel and embedding-sharding plans.

A plan replicates the training step over ``data_parallel`` workers and
optionally pipelines its layers over ``layer_parallel`` devices per
replica. Gradients are reduced with a ring allreduce after the step.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from planner.accelerator_config import AcceleratorConfig
from planner.autodiff import TrainingStepGraph
from planner.exceptions import CapacityInfeasible, InvalidConfig, UnassignedLayer
from planner.footprint import min_footprint, persistent_bytes
from planner.graph import OpNode, unroll_of
from planner.layer_partition_solver import partition_layers
from planner.perf_model import op_times
from planner.requirements_projection import epoch_days

logger = logging.getLogger(__name__)

GRADIENT_BYTES_PER_PARAM = 4
GB = 1e9


@dataclass(frozen=True)
class Workload:
    """A training step together with the dataset it streams."""

    step: TrainingStepGraph
    data_size: float
    tokens_per_sample: float
    binding: Mapping[str, Any] = field(default_factory=dict)
    subbatch_symbol: str = "b"
    layer_depth: int = 1


@dataclass(frozen=True)
class ParallelPlan:
    subbatch: int
    data_parallel: int = 1
    layer_parallel: int = 1
    embedding_shards: int = 1
    assignment: Optional[Tuple[Tuple[str, ...], ...]] = None
    pipeline_microbatches: int = 0
    rematerialize: bool = False
    overlap: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        for label in ("subbatch", "data_parallel", "layer_parallel", "embedding_shards"):
            if getattr(self, label) < 1:
                raise InvalidConfig(f"{label} must be at least 1, got {getattr(self, label)}")
        if self.pipeline_microbatches < 0:
            raise InvalidConfig("pipeline_microbatches must be non-negative")
        if not 0.0 <= self.overlap <= 1.0:
            raise InvalidConfig(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.assignment is not None and len(self.assignment) != self.layer_parallel:
            raise InvalidConfig(
                f"assignment names {len(self.assignment)} devices but layer_parallel is "
                f"{self.layer_parallel}"
            )

    @property
    def n_accel(self) -> int:
        return self.data_parallel * self.layer_parallel

    @property
    def global_batch(self) -> int:
        return self.data_parallel * self.subbatch

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> ParallelPlan:
        assignment = data.get("assignment")
        return ParallelPlan(
            subbatch=int(data["subbatch"]),
            data_parallel=int(data.get("data_parallel", 1)),
            layer_parallel=int(data.get("layer_parallel", 1)),
            embedding_shards=int(data.get("embedding_shards", 1)),
            assignment=tuple(tuple(group) for group in assignment) if assignment else None,
            pipeline_microbatches=int(data.get("pipeline_microbatches", 0)),
            rematerialize=bool(data.get("rematerialize", False)),
            overlap=float(data.get("overlap", 0.0)),
            name=str(data.get("name", "")),
        )


@dataclass(frozen=True)
class PlanReport:
    name: str
    n_accel: int
    global_batch: int
    step_seconds: float
    compute_seconds: float
    comm_seconds: float
    days_per_epoch: float
    utilization: float
    footprints_gb: Tuple[float, ...]
    capacity_gb: float
    flops_per_step: float

    @property
    def max_footprint_gb(self) -> float:
        return max(self.footprints_gb)

    @property
    def over_capacity(self) -> bool:
        return self.max_footprint_gb > self.capacity_gb

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "n_accel": self.n_accel,
            "global_batch": self.global_batch,
            "step_seconds": self.step_seconds,
            "compute_seconds": self.compute_seconds,
            "comm_seconds": self.comm_seconds,
            "days_per_epoch": self.days_per_epoch,
            "utilization": self.utilization,
            "footprints_gb": list(self.footprints_gb),
            "max_footprint_gb": self.max_footprint_gb,
            "over_capacity": self.over_capacity,
        }


def allreduce_time(model_bytes: float, n: int, interconnect_bw: float) -> float:
    """Ring allreduce: each worker sends and receives 2(n-1)/n of the model."""
    if n < 1:
        raise InvalidConfig(f"allreduce needs at least one worker, got {n}")
    return 2.0 * (n - 1) / n * model_bytes / interconnect_bw


def layer_of(op: OpNode, depth: int = 1) -> str:
    """Layer name of an op: the leading path components of what it computes."""
    anchor = op.attrs.get("weight") or op.attrs.get("gradient_of") or op.id
    return "/".join(str(anchor).split("/")[:depth])


def layer_groups(step: TrainingStepGraph, depth: int = 1) -> "OrderedDict[str, List[str]]":
    """Ops of the training step grouped by layer, layers in forward order."""
    graph = step.graph
    groups: "OrderedDict[str, List[str]]" = OrderedDict()
    for op_id in step.forward_ops:
        groups.setdefault(layer_of(graph.op(op_id), depth), [])
    for op in graph.ops.values():
        groups.setdefault(layer_of(op, depth), []).append(op.id)
    return groups


def _binding(workload: Workload, subbatch: float) -> Dict[str, Any]:
    graph = workload.step.graph
    return graph.resolve_binding({**workload.binding, workload.subbatch_symbol: subbatch})


def _model_bytes(workload: Workload, binding: Mapping[str, Any], op_ids: Optional[Sequence[str]] = None) -> float:
    graph = workload.step.graph
    scope = None if op_ids is None else set(op_ids)
    params = 0.0
    for weight in graph.weights():
        if scope is not None and not any(c in scope for c in graph.consumers(weight.id)):
            continue
        params += weight.num_elements.evaluate(binding)
    return GRADIENT_BYTES_PER_PARAM * params


def _check_capacity(name: str, footprints: Sequence[float], acc: AcceleratorConfig) -> None:
    capacity = acc.mem_capacity / GB
    if max(footprints) > capacity:
        logger.warning(
            "%s needs %.1f GB on its largest device, above the %.1f GB capacity",
            name or "plan",
            max(footprints),
            capacity,
        )


def evaluate_data_parallel(
    workload: Workload,
    acc: AcceleratorConfig,
    n: int,
    subbatch: int,
    overlap: float = 0.0,
    name: str = "",
) -> PlanReport:
    """Replicate the step on ``n`` workers; allreduce runs after compute."""
    if n < 1:
        raise InvalidConfig(f"data-parallel width must be at least 1, got {n}")
    binding = _binding(workload, subbatch)
    times = op_times(workload.step, acc, binding)
    compute = float(times["seconds"].sum())
    flops = float(times["flops"].sum())
    comm = allreduce_time(_model_bytes(workload, binding), n, acc.interconnect_bandwidth)
    comm *= 1.0 - overlap
    step_seconds = compute + comm
    footprint = min_footprint(workload.step, binding) / GB
    _check_capacity(name, [footprint], acc)
    report = PlanReport(
        name=name or f"data-parallel x{n}",
        n_accel=n,
        global_batch=n * subbatch,
        step_seconds=step_seconds,
        compute_seconds=compute,
        comm_seconds=comm,
        days_per_epoch=epoch_days(
            workload.data_size, workload.tokens_per_sample, n * subbatch, step_seconds
        ),
        utilization=flops / (acc.peak_flops * step_seconds),
        footprints_gb=(footprint,),
        capacity_gb=acc.mem_capacity / GB,
        flops_per_step=flops * n,
    )
    logger.info("%s: %.2f s per step, %.1f days per epoch", report.name, step_seconds, report.days_per_epoch)
    return report


def resolve_assignment(
    workload: Workload,
    plan: ParallelPlan,
    binding: Mapping[str, Any],
) -> List[List[str]]:
    """Layer names per device, solving for contiguous groups when none are given."""
    groups = layer_groups(workload.step, workload.layer_depth)
    layers = list(groups)
    if plan.assignment is None:
        costs = [
            persistent_bytes(workload.step, binding, groups[layer]) for layer in layers
        ]
        indices = partition_layers(costs, plan.layer_parallel)
        return [[layers[i] for i in device] for device in indices]

    assigned = [layer for device in plan.assignment for layer in device]
    unknown = sorted(set(assigned) - set(layers))
    if unknown:
        raise InvalidConfig(f"assignment names unknown layers {unknown}; layers are {layers}")
    duplicated = sorted({layer for layer in assigned if assigned.count(layer) > 1})
    if duplicated:
        raise InvalidConfig(f"layers assigned to more than one device: {duplicated}")
    missing = [layer for layer in layers if layer not in assigned]
    if missing:
        raise UnassignedLayer(missing)
    return [list(device) for device in plan.assignment]


def _crossing_bytes(workload: Workload, device_of_op: Mapping[str, int], binding: Mapping[str, Any]) -> float:
    graph = workload.step.graph
    crossing = 0.0
    for tensor_id in graph.tensors:
        producer = graph.producer(tensor_id)
        if producer is None:
            continue
        source = device_of_op[producer]
        if any(device_of_op[c] != source for c in graph.consumers(tensor_id)):
            tensor = graph.tensor(tensor_id)
            crossing += tensor.bytes.evaluate(binding) * unroll_of(graph, tensor_id).evaluate(binding)
    return crossing


def evaluate_layer_parallel(
    workload: Workload,
    acc: AcceleratorConfig,
    plan: ParallelPlan,
) -> PlanReport:
    """Pipeline the layers of each replica over ``plan.layer_parallel`` devices.

    With no microbatches the step takes the slowest device's time. With
    ``m`` microbatches it follows the fill/drain schedule
    ``((m - 1) * slowest + sum of devices) / m``. Rematerialization
    reruns each device's forward ops during the backward pass and keeps
    only one microbatch of activations alive.
    """
    if plan.layer_parallel == 1:
        return evaluate_data_parallel(
            workload, acc, plan.data_parallel, plan.subbatch, plan.overlap, plan.name
        )

    binding = _binding(workload, plan.subbatch)
    assignment = resolve_assignment(workload, plan, binding)
    groups = layer_groups(workload.step, workload.layer_depth)
    device_ops = [[op for layer in device for op in groups[layer]] for device in assignment]
    device_of_op = {op: d for d, ops in enumerate(device_ops) for op in ops}

    times = op_times(workload.step, acc, binding).set_index("op_id")
    forward = set(workload.step.forward_ops)
    stage_seconds = []
    for ops in device_ops:
        seconds = float(times.loc[ops, "seconds"].sum())
        if plan.rematerialize:
            seconds += float(times.loc[[o for o in ops if o in forward], "seconds"].sum())
        stage_seconds.append(seconds)
    m = plan.pipeline_microbatches
    slowest = max(stage_seconds)
    pipeline = slowest if m == 0 else ((m - 1) * slowest + sum(stage_seconds)) / m

    transfer = _crossing_bytes(workload, device_of_op, binding) / acc.interconnect_bandwidth
    allreduce = max(
        allreduce_time(_model_bytes(workload, binding, ops), plan.data_parallel, acc.interconnect_bandwidth)
        for ops in device_ops
    )
    comm = transfer + allreduce * (1.0 - plan.overlap)
    step_seconds = pipeline + comm

    micro = plan.subbatch / m if plan.rematerialize and m > 0 else plan.subbatch
    micro_binding = _binding(workload, micro)
    footprints = tuple(
        min_footprint(workload.step, micro_binding, op_ids=ops) / GB for ops in device_ops
    )
    _check_capacity(plan.name, footprints, acc)

    flops = float(times["flops"].sum())
    for device, seconds, size in zip(assignment, stage_seconds, footprints):
        logger.debug("Device %s: %.3f s, %.1f GB", "+".join(device), seconds, size)
    report = PlanReport(
        name=plan.name or f"layer-parallel x{plan.layer_parallel}",
        n_accel=plan.n_accel,
        global_batch=plan.global_batch,
        step_seconds=step_seconds,
        compute_seconds=pipeline,
        comm_seconds=comm,
        days_per_epoch=epoch_days(
            workload.data_size, workload.tokens_per_sample, plan.global_batch, step_seconds
        ),
        utilization=flops * plan.data_parallel / (plan.n_accel * acc.peak_flops * step_seconds),
        footprints_gb=footprints,
        capacity_gb=acc.mem_capacity / GB,
        flops_per_step=flops * plan.data_parallel,
    )
    logger.info("%s: %.2f s per step, %.1f days per epoch", report.name, step_seconds, report.days_per_epoch)
    return report


def _water_fill(bases: Sequence[float], amount: float) -> List[float]:
    """Increments that raise the lowest bases to a common level."""
    order = sorted(range(len(bases)), key=lambda i: (bases[i], i))
    level = bases[order[0]]
    filled = 1
    remaining = amount
    while filled <= len(order):
        next_base = bases[order[filled]] if filled < len(order) else float("inf")
        room = (next_base - level) * filled
        if room >= remaining:
            level += remaining / filled
            break
        remaining -= room
        level = next_base
        filled += 1
    return [max(0.0, level - b) for b in bases]


def shard_embedding(
    footprints_gb: Sequence[float],
    embedding_gb: float,
    shards: int,
    capacity_gb: Optional[float] = None,
    origin: int = 0,
) -> List[float]:
    """Split the embedding on ``origin`` over the ``shards`` least-loaded devices.

    The origin keeps as many rows as fit under the resulting maximum and
    the rest is levelled over the other chosen devices. Totals are kept.
    """
    if shards < 1 or shards > len(footprints_gb):
        raise InvalidConfig(f"shard count must lie in [1, {len(footprints_gb)}], got {shards}")
    if embedding_gb < 0 or embedding_gb > footprints_gb[origin]:
        raise InvalidConfig(
            f"embedding of {embedding_gb} GB does not fit the {footprints_gb[origin]} GB on device {origin}"
        )
    result = list(footprints_gb)
    if shards > 1:
        bases = list(footprints_gb)
        bases[origin] -= embedding_gb
        others = sorted((i for i in range(len(bases)) if i != origin), key=lambda i: (bases[i], i))
        chosen = [origin] + others[: shards - 1]
        untouched = [bases[i] for i in range(len(bases)) if i not in chosen]
        level = max(
            b + inc for b, inc in zip([bases[i] for i in chosen], _water_fill([bases[i] for i in chosen], embedding_gb))
        )
        cap = max([level] + untouched)
        kept = min(embedding_gb, max(0.0, cap - bases[origin]))
        rest = [i for i in chosen if i != origin]
        spread = _water_fill([bases[i] for i in rest], embedding_gb - kept)
        result = bases
        result[origin] += kept
        for i, inc in zip(rest, spread):
            result[i] += inc
    if capacity_gb is not None and max(result) > capacity_gb:
        raise CapacityInfeasible(max(result), capacity_gb)
    logger.debug("Sharded %.1f GB embedding over %d devices: %s", embedding_gb, shards, result)
    return result


def embedding_bytes(
    workload: Workload,
    layer: str,
    subbatch: Optional[int] = None,
) -> float:
    """Persistent bytes of one layer: its weights, gradients and optimizer state."""
    binding = _binding(workload, subbatch or 1)
    groups = layer_groups(workload.step, workload.layer_depth)
    if layer not in groups:
        raise InvalidConfig(f"unknown layer '{layer}'; layers are {list(groups)}")
    return persistent_bytes(workload.step, binding, groups[layer])


def with_sharded_embedding(
    report: PlanReport,
    embedding_gb: float,
    shards: int,
    origin: int = 0,
    name: str = "",
) -> PlanReport:
    """A layer-parallel report whose embedding is split over ``shards`` devices."""
    footprints = shard_embedding(
        report.footprints_gb, embedding_gb, shards, report.capacity_gb, origin
    )
    return replace(report, footprints_gb=tuple(footprints), name=name or report.name)
