"""Framework-independent compute graph with symbolic tensor shapes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx

from planner.exceptions import (
    CycleDetected,
    DanglingTensor,
    DuplicateId,
    GraphFrozen,
    InvalidConfig,
    UnknownTensor,
)
from planner.symexpr import DimExpr, Operand, as_expr, product

logger = logging.getLogger(__name__)

DEFAULT_DTYPE_BYTES = 4


class TensorKind(Enum):
    WEIGHT = "weight"
    ACTIVATION = "activation"
    INPUT = "input"
    OUTPUT = "output"
    GRADIENT = "gradient"


class OpKind(Enum):
    MATMUL = "MatMul"
    CONV2D = "Conv2D"
    POINTWISE = "Pointwise"
    EMBEDDING_LOOKUP = "EmbeddingLookup"
    REDUCTION = "Reduction"
    SOFTMAX = "Softmax"
    BATCH_NORM = "BatchNorm"
    CONCAT = "Concat"
    SPLIT = "Split"
    POOL = "Pool"
    WEIGHT_UPDATE = "WeightUpdate"
    IDENTITY = "Identity"


@dataclass(frozen=True)
class TensorSpec:
    id: str
    shape: Tuple[DimExpr, ...]
    kind: TensorKind = TensorKind.ACTIVATION
    dtype_bytes: int = DEFAULT_DTYPE_BYTES

    @property
    def num_elements(self) -> DimExpr:
        return product(self.shape)

    @property
    def bytes(self) -> DimExpr:
        return self.num_elements * self.dtype_bytes


@dataclass(frozen=True)
class OpNode:
    id: str
    kind: OpKind
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    attrs: Mapping[str, Any] = field(default_factory=dict)

    @property
    def unroll_count(self) -> Optional[DimExpr]:
        value = self.attrs.get("unroll_count")
        return None if value is None else as_expr(value)

    @property
    def repeat(self) -> Optional[DimExpr]:
        """Number of identical stacked layers this op stands for."""
        value = self.attrs.get("repeat")
        return None if value is None else as_expr(value)

    @property
    def multiplicity(self) -> Optional[DimExpr]:
        """Copies one analytic traversal costs: timesteps times stacked layers."""
        counts = [c for c in (self.unroll_count, self.repeat) if c is not None]
        return product(counts) if counts else None

    def attr_expr(self, name: str, default: Operand | None = None) -> DimExpr:
        value = self.attrs.get(name, default)
        if value is None:
            raise KeyError(f"Op '{self.id}' has no attribute '{name}'")
        return as_expr(value)


@dataclass(frozen=True)
class ValidationReport:
    graph_name: str
    op_count: int
    tensor_count: int
    symbols: Tuple[str, ...]


class ComputeGraph:
    """Directed acyclic graph of ops and tensors.

    The graph is mutable until ``validate`` succeeds; afterwards every
    mutation raises ``GraphFrozen``.
    """

    def __init__(
        self,
        name: str,
        symbol_defaults: Mapping[str, int] | None = None,
    ) -> None:
        self.name = name
        self.symbol_defaults: Dict[str, int] = dict(symbol_defaults or {})
        self._tensors: Dict[str, TensorSpec] = {}
        self._ops: Dict[str, OpNode] = {}
        self._producer: Dict[str, str] = {}
        self._consumers: Dict[str, List[str]] = {}
        self.io_inputs: List[str] = []
        self.io_outputs: List[str] = []
        # state tensor id -> tensor that carries it into the next timestep
        self.recurrences: Dict[str, str] = {}
        self._frozen = False

    # construction

    def _check_mutable(self) -> None:
        if self._frozen:
            raise GraphFrozen(self.name)

    def add_tensor(
        self,
        tensor_id: str,
        shape: Sequence[Operand],
        kind: TensorKind = TensorKind.ACTIVATION,
        dtype_bytes: int = DEFAULT_DTYPE_BYTES,
    ) -> TensorSpec:
        self._check_mutable()
        if tensor_id in self._tensors:
            raise DuplicateId(tensor_id)
        spec = TensorSpec(tensor_id, tuple(as_expr(d) for d in shape), kind, dtype_bytes)
        self._tensors[tensor_id] = spec
        self._consumers[tensor_id] = []
        return spec

    def add_op(
        self,
        op_id: str,
        kind: OpKind,
        inputs: Sequence[str],
        outputs: Sequence[str],
        **attrs: Any,
    ) -> OpNode:
        self._check_mutable()
        if op_id in self._ops:
            raise DuplicateId(op_id)
        for tensor_id in list(inputs) + list(outputs):
            if tensor_id not in self._tensors:
                raise UnknownTensor(tensor_id, op_id)
        for tensor_id in outputs:
            if tensor_id in self._producer:
                raise DuplicateId(f"{tensor_id} (second producer {op_id})")
        op = OpNode(op_id, kind, tuple(inputs), tuple(outputs), dict(attrs))
        self._ops[op_id] = op
        for tensor_id in outputs:
            self._producer[tensor_id] = op_id
        for tensor_id in dict.fromkeys(inputs):
            self._consumers[tensor_id].append(op_id)
        return op

    def mark_io_input(self, tensor_id: str) -> None:
        self._check_mutable()
        self._require(tensor_id)
        self.io_inputs.append(tensor_id)

    def mark_io_output(self, tensor_id: str) -> None:
        self._check_mutable()
        self._require(tensor_id)
        self.io_outputs.append(tensor_id)

    def add_recurrence(self, state_id: str, carried_id: str) -> None:
        self._check_mutable()
        self._require(state_id)
        self._require(carried_id)
        self.recurrences[state_id] = carried_id

    def _require(self, tensor_id: str) -> TensorSpec:
        if tensor_id not in self._tensors:
            raise UnknownTensor(tensor_id)
        return self._tensors[tensor_id]

    # queries

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def tensors(self) -> Mapping[str, TensorSpec]:
        return self._tensors

    @property
    def ops(self) -> Mapping[str, OpNode]:
        return self._ops

    def tensor(self, tensor_id: str) -> TensorSpec:
        return self._require(tensor_id)

    def op(self, op_id: str) -> OpNode:
        return self._ops[op_id]

    def producer(self, tensor_id: str) -> Optional[str]:
        return self._producer.get(tensor_id)

    def consumers(self, tensor_id: str) -> List[str]:
        return list(self._consumers.get(tensor_id, []))

    def weights(self) -> List[TensorSpec]:
        return [
            t
            for t in self._tensors.values()
            if t.kind is TensorKind.WEIGHT and t.id not in self._producer
        ]

    def resolve_binding(self, binding: Mapping[str, Any] | None = None) -> Dict[str, Any]:
        """Symbol defaults overridden by an explicit binding."""
        resolved: Dict[str, Any] = dict(self.symbol_defaults)
        resolved.update(binding or {})
        return resolved

    def declared_symbols(self) -> Tuple[str, ...]:
        names = set(self.symbol_defaults)
        for tensor in self._tensors.values():
            for dim in tensor.shape:
                names |= dim.symbols()
        for op in self._ops.values():
            for value in op.attrs.values():
                if isinstance(value, DimExpr):
                    names |= value.symbols()
        return tuple(sorted(names))

    def op_dag(self) -> nx.DiGraph:
        dag = nx.DiGraph()
        dag.add_nodes_from(self._ops)
        for tensor_id, producer in self._producer.items():
            for consumer in self._consumers[tensor_id]:
                dag.add_edge(producer, consumer, tensor=tensor_id)
        return dag

    # validation

    def validate(self) -> ValidationReport:
        """Check acyclicity, producers and per-kind shapes; freeze on success."""
        # local import: the catalog depends on the graph types
        from planner.op_catalog import check_shapes

        if self._frozen:
            return self._report()

        dag = self.op_dag()
        try:
            cycle = nx.find_cycle(dag)
        except nx.NetworkXNoCycle:
            cycle = []
        if cycle:
            path = [edge[0] for edge in cycle] + [cycle[0][0]]
            raise CycleDetected(path)

        for tensor in self._tensors.values():
            if tensor.id in self._producer:
                continue
            if tensor.kind in (TensorKind.INPUT, TensorKind.WEIGHT):
                continue
            raise DanglingTensor(tensor.id)

        for op in self._ops.values():
            check_shapes(self, op)

        self._frozen = True
        logger.debug("Validated graph %s with %d ops", self.name, len(self._ops))
        return self._report()

    def _report(self) -> ValidationReport:
        return ValidationReport(
            graph_name=self.name,
            op_count=len(self._ops),
            tensor_count=len(self._tensors),
            symbols=self.declared_symbols(),
        )


PriorityFn = Callable[[str, "frozenset[str]"], Any]


def topological_order(
    graph: ComputeGraph,
    priority: Optional[PriorityFn] = None,
) -> List[str]:
    """Kahn's algorithm with a deterministic tie-break.

    ``priority(op_id, executed)`` ranks the ready ops; the op id breaks
    remaining ties. Without a priority the order is by op id only.
    """
    dag = graph.op_dag()
    if priority is None:
        return list(nx.lexicographical_topological_sort(dag))

    indegree = {op_id: dag.in_degree(op_id) for op_id in dag.nodes}
    executed: set[str] = set()
    order: List[str] = []
    ready_set = {op_id for op_id, deg in indegree.items() if deg == 0}
    while ready_set:
        frozen_executed = frozenset(executed)
        op_id = min(ready_set, key=lambda o: (priority(o, frozen_executed), o))
        ready_set.remove(op_id)
        executed.add(op_id)
        order.append(op_id)
        for succ in dag.successors(op_id):
            indegree[succ] -= 1
            if indegree[succ] == 0:
                ready_set.add(succ)
    return order


def disjoint_union(name: str, graphs: Iterable[ComputeGraph]) -> ComputeGraph:
    """Combine graphs side by side, prefixing ids with the graph index."""
    combined = ComputeGraph(name)
    for index, part in enumerate(graphs):
        prefix = f"g{index}/"
        for tensor in part.tensors.values():
            combined.add_tensor(prefix + tensor.id, tensor.shape, tensor.kind, tensor.dtype_bytes)
        for op in part.ops.values():
            combined.add_op(
                prefix + op.id,
                op.kind,
                [prefix + t for t in op.inputs],
                [prefix + t for t in op.outputs],
                **dict(op.attrs),
            )
        combined.io_inputs.extend(prefix + t for t in part.io_inputs)
        combined.io_outputs.extend(prefix + t for t in part.io_outputs)
        for state, carried in part.recurrences.items():
            combined.recurrences[prefix + state] = prefix + carried
        combined.symbol_defaults.update(part.symbol_defaults)
    combined.validate()
    return combined


def unroll_of(graph: ComputeGraph, tensor_id: str) -> DimExpr:
    """Number of copies a tensor stands for in analytic mode.

    Weights and weight gradients are shared across timesteps and already
    carry their stacked-layer axis; recurrent state keeps one copy per
    stacked layer. Other tensors inherit the multiplicity of their
    producer, and graph inputs that of their first consumer.
    """
    tensor = graph.tensor(tensor_id)
    if tensor.kind in (TensorKind.WEIGHT, TensorKind.GRADIENT):
        return DimExpr.constant(1)
    if tensor_id in graph.recurrences:
        for consumer in graph.consumers(tensor_id):
            layers = graph.op(consumer).repeat
            if layers is not None:
                return layers
        return DimExpr.constant(1)
    producer = graph.producer(tensor_id)
    if producer is not None:
        count = graph.op(producer).multiplicity
        return count if count is not None else DimExpr.constant(1)
    for consumer in graph.consumers(tensor_id):
        count = graph.op(consumer).multiplicity
        if count is not None:
            return count
    return DimExpr.constant(1)


def expand_unrolled(graph: ComputeGraph, binding: Mapping[str, int]) -> ComputeGraph:
    """Physical mode: replace every unrolled op by literal per-timestep copies.

    Recurrent state inputs of copy ``t`` are wired to the carried tensor
    of copy ``t-1``; weights stay shared. Only forward graphs can be
    expanded, since weight gradients accumulate across timesteps.
    """
    expanded = ComputeGraph(f"{graph.name}@physical", graph.symbol_defaults)
    copies: Dict[str, List[str]] = {}

    def steps_of(op: OpNode) -> int:
        count = op.unroll_count
        return 1 if count is None else int(count.evaluate(binding))

    def declare(tensor_id: str, step: Optional[int]) -> str:
        tensor = graph.tensor(tensor_id)
        new_id = tensor_id if step is None else f"{tensor_id}@{step}"
        if new_id not in expanded.tensors:
            expanded.add_tensor(new_id, tensor.shape, tensor.kind, tensor.dtype_bytes)
            copies.setdefault(tensor_id, []).append(new_id)
        return new_id

    def resolve(tensor_id: str, step: Optional[int]) -> str:
        tensor = graph.tensor(tensor_id)
        producer = graph.producer(tensor_id)
        if tensor_id in graph.recurrences:
            if step is not None and step > 0:
                return f"{graph.recurrences[tensor_id]}@{step - 1}"
            return declare(tensor_id, None)
        if producer is None:
            if tensor.kind is TensorKind.WEIGHT or step is None:
                return declare(tensor_id, None)
            return declare(tensor_id, step)
        producer_op = graph.op(producer)
        if producer_op.unroll_count is None:
            return tensor_id
        if step is None:
            return f"{tensor_id}@{steps_of(producer_op) - 1}"
        return f"{tensor_id}@{step}"

    planned: List[Tuple[str, OpNode, Optional[int], List[str], Dict[str, Any]]] = []
    for op_id in topological_order(graph):
        op = graph.op(op_id)
        attrs = {k: v for k, v in op.attrs.items() if k != "unroll_count"}
        if op.unroll_count is None:
            outputs = [declare(t, None) for t in op.outputs]
            planned.append((op_id, op, None, outputs, attrs))
            continue
        for t in op.outputs:
            if graph.tensor(t).kind in (TensorKind.WEIGHT, TensorKind.GRADIENT):
                raise InvalidConfig(
                    f"Op '{op_id}' writes '{t}' once per timestep; expand the forward graph instead"
                )
        for step in range(steps_of(op)):
            outputs = [declare(t, step) for t in op.outputs]
            planned.append((f"{op_id}@{step}", op, step, outputs, attrs))

    # recurrent inputs refer to later copies, so every output exists before wiring
    for new_id, op, at_step, outputs, attrs in planned:
        inputs = [resolve(t, at_step) for t in op.inputs]
        expanded.add_op(new_id, op.kind, inputs, outputs, **attrs)

    for tensor_id in graph.tensors:
        if tensor_id not in copies and graph.producer(tensor_id) is None:
            declare(tensor_id, None)
    for tensor_id in graph.io_inputs:
        expanded.io_inputs.extend(copies.get(tensor_id, []))
    for tensor_id in graph.io_outputs:
        expanded.io_outputs.extend(copies.get(tensor_id, []))
    expanded.validate()
    return expanded
