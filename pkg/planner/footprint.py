"""Minimal memory footprint of a graph under a topological traversal.

Weights, their gradient buffers and optimizer state stay allocated for
the whole step. Every other tensor is allocated when its producer runs
(graph inputs: when their first consumer runs) and freed once all of
its consumers have executed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Union

from planner.autodiff import TrainingStepGraph, as_compute_graph
from planner.exceptions import InvalidConfig, TooLargeForExhaustive
from planner.graph import ComputeGraph, OpKind, TensorKind, topological_order, unroll_of
from planner.symexpr import Binding

logger = logging.getLogger(__name__)

EXHAUSTIVE_OP_LIMIT = 12
_IN_PLACE_KINDS = (OpKind.POINTWISE, OpKind.IDENTITY)
_NOT_ALLOCATED = (TensorKind.WEIGHT, TensorKind.GRADIENT)


class FootprintMode(Enum):
    HEURISTIC = "heuristic"
    EXHAUSTIVE = "exhaustive"


@dataclass
class _Problem:
    op_ids: List[str]
    persistent: float
    size: Dict[str, float] = field(default_factory=dict)
    produced: Dict[str, List[str]] = field(default_factory=dict)
    external: Dict[str, List[str]] = field(default_factory=dict)
    reads: Dict[str, List[str]] = field(default_factory=dict)
    consumers: Dict[str, Set[str]] = field(default_factory=dict)
    preds: Dict[str, Set[str]] = field(default_factory=dict)
    # transient tensors produced outside the traversal
    inputs: Set[str] = field(default_factory=set)

    def alloc(self, op_id: str, executed: FrozenSet[str]) -> float:
        amount = sum(self.size[t] for t in self.produced[op_id])
        for t in self.external[op_id]:
            if not self.consumers[t] & executed:
                amount += self.size[t]
        return amount

    def freed(self, op_id: str, executed: FrozenSet[str]) -> float:
        amount = 0.0
        for t in self.reads[op_id]:
            if self.consumers[t] - executed == {op_id}:
                amount += self.size[t]
        for t in self.produced[op_id]:
            if not self.consumers[t]:
                amount += self.size[t]
        return amount

    def live(self, executed: FrozenSet[str]) -> float:
        amount = 0.0
        for t, users in self.consumers.items():
            if users <= executed:
                continue
            if t in self.inputs:
                materialized = bool(users & executed)
            else:
                materialized = any(t in self.produced[o] for o in executed)
            if materialized:
                amount += self.size[t]
        return amount


def persistent_bytes(
    g: Union[ComputeGraph, TrainingStepGraph],
    binding: Binding,
    op_ids: Optional[Iterable[str]] = None,
) -> float:
    """Weights plus dense gradient buffers plus optimizer state slots."""
    graph = as_compute_graph(g)
    scope = set(graph.ops) if op_ids is None else set(op_ids)
    resolved = graph.resolve_binding(binding)
    updates = {
        op.inputs[0]: op
        for op in graph.ops.values()
        if op.kind is OpKind.WEIGHT_UPDATE and op.id in scope
    }
    amount = 0.0
    for weight in graph.weights():
        if op_ids is not None and not any(c in scope for c in graph.consumers(weight.id)):
            continue
        size = weight.bytes.evaluate(resolved)
        amount += size
        update = updates.get(weight.id)
        if update is None:
            continue
        amount += size * int(update.attrs.get("state_slots", 0))
        if graph.tensor(update.inputs[1]).kind is TensorKind.GRADIENT:
            amount += size
    return amount


def _prepare(
    graph: ComputeGraph,
    binding: Binding,
    in_place: bool,
    op_ids: Optional[Iterable[str]],
) -> _Problem:
    resolved = graph.resolve_binding(binding)
    scope = list(graph.ops) if op_ids is None else [o for o in graph.ops if o in set(op_ids)]
    in_scope = set(scope)
    problem = _Problem(op_ids=scope, persistent=persistent_bytes(graph, resolved, op_ids))

    def transient(tensor_id: str) -> bool:
        return graph.tensor(tensor_id).kind not in _NOT_ALLOCATED

    def size_of(tensor_id: str) -> float:
        if tensor_id not in problem.size:
            tensor = graph.tensor(tensor_id)
            problem.size[tensor_id] = tensor.bytes.evaluate(resolved) * unroll_of(
                graph, tensor_id
            ).evaluate(resolved)
        return problem.size[tensor_id]

    for op_id in scope:
        op = graph.op(op_id)
        problem.produced[op_id] = []
        problem.external[op_id] = []
        problem.reads[op_id] = []
        problem.preds[op_id] = set()
        for t in op.outputs:
            if not transient(t):
                continue
            size_of(t)
            if in_place and op.kind in _IN_PLACE_KINDS:
                problem.size[t] = 0.0
            problem.produced[op_id].append(t)
            problem.consumers[t] = {c for c in graph.consumers(t) if c in in_scope}
        for t in dict.fromkeys(op.inputs):
            producer = graph.producer(t)
            if producer in in_scope:
                problem.preds[op_id].add(producer)
            if not transient(t):
                continue
            size_of(t)
            problem.reads[op_id].append(t)
            if producer not in in_scope:
                problem.external[op_id].append(t)
                problem.inputs.add(t)
                problem.consumers[t] = {c for c in graph.consumers(t) if c in in_scope}
    return problem


def _simulate(problem: _Problem, order: List[str]) -> float:
    executed: Set[str] = set()
    live = 0.0
    peak = problem.persistent
    for op_id in order:
        before = frozenset(executed)
        live += problem.alloc(op_id, before)
        peak = max(peak, problem.persistent + live)
        live -= problem.freed(op_id, before)
        executed.add(op_id)
    return peak


def heuristic_order(problem: _Problem, graph: ComputeGraph) -> List[str]:
    if len(problem.op_ids) == len(graph.ops):
        return topological_order(
            graph,
            priority=lambda o, done: problem.alloc(o, done) - problem.freed(o, done),
        )
    # subgraph: Kahn over the scoped ops only
    remaining = {o: set(problem.preds[o]) for o in problem.op_ids}
    executed: Set[str] = set()
    order: List[str] = []
    while remaining:
        done = frozenset(executed)
        ready = [o for o, preds in remaining.items() if preds <= done]
        op_id = min(ready, key=lambda o: (problem.alloc(o, done) - problem.freed(o, done), o))
        order.append(op_id)
        executed.add(op_id)
        del remaining[op_id]
    return order


def _exhaustive(problem: _Problem) -> float:
    ops = problem.op_ids
    count = len(ops)
    if count > EXHAUSTIVE_OP_LIMIT:
        raise TooLargeForExhaustive(count, EXHAUSTIVE_OP_LIMIT)
    index = {o: i for i, o in enumerate(ops)}
    pred_masks = [sum(1 << index[p] for p in problem.preds[o]) for o in ops]
    best = [float("inf")] * (1 << count)
    best[0] = problem.persistent
    for mask in range(1, 1 << count):
        for i in range(count):
            bit = 1 << i
            if not mask & bit:
                continue
            prior = mask ^ bit
            if pred_masks[i] & ~prior or best[prior] == float("inf"):
                continue
            done = frozenset(ops[j] for j in range(count) if prior & (1 << j))
            step_peak = problem.persistent + problem.live(done) + problem.alloc(ops[i], done)
            best[mask] = min(best[mask], max(best[prior], step_peak))
    return best[(1 << count) - 1]


def min_footprint(
    g: Union[ComputeGraph, TrainingStepGraph],
    binding: Binding,
    mode: Union[FootprintMode, str] = FootprintMode.HEURISTIC,
    in_place: bool = False,
    op_ids: Optional[Iterable[str]] = None,
) -> float:
    """Peak allocated bytes for one step.

    ``heuristic`` runs one traversal that always executes the ready op
    with the smallest allocated-minus-freed delta (ties by op id).
    ``exhaustive`` returns the minimum peak over every topological order
    and is limited to small graphs. ``op_ids`` restricts the traversal to
    a subgraph; tensors produced outside it count as inputs.

    Graph inputs are transient: allocated when their first consumer runs
    and freed after their last consumer, like any activation.
    """
    graph = as_compute_graph(g)
    try:
        mode = FootprintMode(mode)
    except ValueError as exc:
        raise InvalidConfig(f"Unknown footprint mode: {mode}") from exc
    problem = _prepare(graph, binding, in_place, op_ids)
    if mode is FootprintMode.EXHAUSTIVE:
        peak = _exhaustive(problem)
    else:
        peak = _simulate(problem, heuristic_order(problem, graph))
    logger.debug("Footprint of %s (%s): %.0f bytes", graph.name, mode.value, peak)
    return peak


def footprint_of_order(
    g: Union[ComputeGraph, TrainingStepGraph],
    binding: Binding,
    order: List[str],
    in_place: bool = False,
) -> float:
    """Peak bytes for an explicit execution order."""
    graph = as_compute_graph(g)
    return _simulate(_prepare(graph, binding, in_place, None), order)


def footprint_lower_bound(
    g: Union[ComputeGraph, TrainingStepGraph],
    binding: Binding,
) -> float:
    """Persistent bytes plus the largest single-op working set."""
    graph = as_compute_graph(g)
    problem = _prepare(graph, binding, False, None)
    widest = max(
        (
            sum(problem.size[t] for t in problem.reads[o])
            + sum(problem.size[t] for t in problem.produced[o])
            for o in problem.op_ids
        ),
        default=0.0,
    )
    return problem.persistent + widest
