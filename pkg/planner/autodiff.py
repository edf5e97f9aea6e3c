"""Derive a training-step graph (forward, backward, weight update)."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from planner.exceptions import DivisionByZeroForward, MissingWeightDeclaration
from planner.graph import ComputeGraph, OpKind, OpNode, TensorKind, topological_order
from planner.op_catalog import op_alg_flops
from planner.symexpr import Binding, DimExpr, total

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSpec:
    name: str
    flops_per_weight: int
    passes: int
    state_slots: int


# plain SGD reads weight and gradient and writes the weight; it keeps no state
SGD = OptimizerSpec("sgd", flops_per_weight=2, passes=3, state_slots=0)
MOMENTUM = OptimizerSpec("momentum", flops_per_weight=4, passes=5, state_slots=1)
ADAM = OptimizerSpec("adam", flops_per_weight=10, passes=7, state_slots=2)
OPTIMIZERS: Dict[str, OptimizerSpec] = {o.name: o for o in (SGD, MOMENTUM, ADAM)}

# timestep and stacked-layer counts a gradient op inherits from its forward op
_COPY_ATTRS = ("unroll_count", "repeat")


@dataclass(frozen=True)
class TrainingStepGraph:
    graph: ComputeGraph
    forward_ops: Tuple[str, ...]
    gradient_ops: Mapping[str, Tuple[str, ...]]
    weight_updates: Mapping[str, str]
    # weights whose gradient is a dense tensor of the weight's shape
    dense_gradients: Mapping[str, str]
    optimizer: OptimizerSpec = SGD

    @property
    def name(self) -> str:
        return self.graph.name


class _Deriver:
    def __init__(
        self,
        forward: ComputeGraph,
        optimizer: OptimizerSpec,
        layer_optimizers: Optional[Mapping[str, OptimizerSpec]] = None,
    ) -> None:
        self.forward = forward
        self.optimizer = optimizer
        self.layer_optimizers = dict(layer_optimizers or {})
        self.graph = ComputeGraph(f"{forward.name}/train", forward.symbol_defaults)
        self.weight_ids = {w.id for w in forward.weights()}
        self.partials: Dict[str, List[str]] = defaultdict(list)
        self.sparse_rows: Dict[str, List[str]] = defaultdict(list)
        self.gradient_ops: Dict[str, List[str]] = defaultdict(list)
        self.requires_grad: set[str] = set(self.weight_ids)

    def run(self) -> TrainingStepGraph:
        fwd = self.forward
        for tensor in fwd.tensors.values():
            self.graph.add_tensor(tensor.id, tensor.shape, tensor.kind, tensor.dtype_bytes)
        order = topological_order(fwd)
        for op_id in order:
            op = fwd.op(op_id)
            self.graph.add_op(op.id, op.kind, op.inputs, op.outputs, **dict(op.attrs))
            if any(t in self.requires_grad for t in op.inputs):
                self.requires_grad.update(op.outputs)
        self.graph.io_inputs.extend(fwd.io_inputs)
        self.graph.io_outputs.extend(fwd.io_outputs)
        self.graph.recurrences.update(fwd.recurrences)

        for op_id in reversed(order):
            op = fwd.op(op_id)
            if op.kind is OpKind.WEIGHT_UPDATE:
                continue
            if op.kind in (OpKind.MATMUL, OpKind.CONV2D) or any(
                t in self.requires_grad for t in op.inputs
            ):
                self._backward(op)

        updates, dense = self._weight_updates()
        self.graph.validate()
        logger.debug(
            "Derived training graph %s: %d forward ops, %d total ops",
            self.graph.name,
            len(order),
            len(self.graph.ops),
        )
        return TrainingStepGraph(
            graph=self.graph,
            forward_ops=tuple(order),
            gradient_ops={k: tuple(v) for k, v in self.gradient_ops.items()},
            weight_updates=updates,
            dense_gradients=dense,
            optimizer=self.optimizer,
        )

    # helpers

    def optimizer_for(self, weight_id: str) -> OptimizerSpec:
        """Optimizer of the layer owning a weight, keyed by its leading path component."""
        return self.layer_optimizers.get(weight_id.split("/")[0], self.optimizer)

    def _grad_kind(self, target: str) -> TensorKind:
        return TensorKind.GRADIENT if target in self.weight_ids else TensorKind.ACTIVATION

    def _partial(self, target: str, op_id: str) -> str:
        tensor = self.forward.tensor(target)
        grad_id = f"grad/{target}/from/{op_id}"
        self.graph.add_tensor(grad_id, tensor.shape, self._grad_kind(target), tensor.dtype_bytes)
        self.partials[target].append(grad_id)
        return grad_id

    def _emit(self, fwd_op: OpNode, suffix: str, kind: OpKind, inputs: Sequence[str], outputs: Sequence[str], **attrs: object) -> None:
        op_id = f"{fwd_op.id}/grad{suffix}"
        for name in _COPY_ATTRS:
            if name in fwd_op.attrs:
                attrs[name] = fwd_op.attrs[name]
        attrs["gradient_of"] = fwd_op.id
        self.graph.add_op(op_id, kind, inputs, outputs, **attrs)
        self.gradient_ops[fwd_op.id].append(op_id)

    def _upstream(self, tensor_id: str, copies: Mapping[str, object]) -> str:
        """Accumulated gradient of a forward tensor, seeding sinks."""
        parts = self.partials.get(tensor_id, [])
        tensor = self.forward.tensor(tensor_id)
        if not parts:
            seed = f"grad/{tensor_id}"
            self.graph.add_tensor(seed, tensor.shape, TensorKind.INPUT, tensor.dtype_bytes)
            return seed
        if len(parts) == 1:
            return parts[0]
        summed = f"grad/{tensor_id}"
        self.graph.add_tensor(summed, tensor.shape, self._grad_kind(tensor_id), tensor.dtype_bytes)
        attrs: Dict[str, object] = {
            "flops_per_element": len(parts) - 1,
            "elements": tensor.num_elements,
            "gradient_of": tensor_id,
        }
        if tensor_id not in self.weight_ids:
            attrs.update(copies)
        self.graph.add_op(f"accumulate/{tensor_id}", OpKind.POINTWISE, parts, [summed], **attrs)
        return summed

    def _backward(self, op: OpNode) -> None:
        kind = op.kind
        copies = {name: op.attrs[name] for name in _COPY_ATTRS if name in op.attrs}
        targets = [t for t in dict.fromkeys(op.inputs) if t in self.requires_grad]

        if kind is OpKind.MATMUL:
            a, b = op.inputs
            d_c = self._upstream(op.outputs[0], copies)
            ta, tb = bool(op.attrs.get("transpose_a")), bool(op.attrs.get("transpose_b"))
            extra = {"batch": op.attrs["batch"]} if "batch" in op.attrs else {}
            d_a, d_b = self._partial(a, op.id), self._partial(b, op.id)
            if not ta:
                self._emit(op, "/input", kind, [d_c, b], [d_a], transpose_b=not tb, **extra)
            else:
                self._emit(op, "/input", kind, [b, d_c], [d_a], transpose_a=tb, transpose_b=True, **extra)
            if not tb:
                self._emit(op, "/weight", kind, [a, d_c], [d_b], transpose_a=not ta, **extra)
            else:
                self._emit(op, "/weight", kind, [d_c, a], [d_b], transpose_a=True, transpose_b=ta, **extra)
            return

        if kind is OpKind.CONV2D:
            x, w = op.inputs
            d_y = self._upstream(op.outputs[0], copies)
            self._emit(op, "/input", kind, [d_y, w], [self._partial(x, op.id)], role="input_grad")
            self._emit(op, "/filter", kind, [x, d_y], [self._partial(w, op.id)], role="filter_grad")
            return

        if not targets:
            return

        if kind is OpKind.EMBEDDING_LOOKUP:
            ids, table = op.inputs
            d_out = self._upstream(op.outputs[0], copies)
            rows_id = f"grad/{table}/rows/{op.id}"
            out = self.forward.tensor(op.outputs[0])
            self.graph.add_tensor(rows_id, out.shape, TensorKind.ACTIVATION, out.dtype_bytes)
            self._emit(op, "", kind, [d_out, ids], [rows_id], scatter=True)
            self.sparse_rows[table].append(rows_id)
            return

        upstream = [self._upstream(t, copies) for t in op.outputs]
        outputs = [self._partial(t, op.id) for t in targets]
        saved = [t for t in op.inputs if t not in self.weight_ids]

        if kind is OpKind.POINTWISE:
            self._emit(
                op, "", kind, upstream + saved, outputs,
                flops_per_element=op.attrs.get("flops_per_element", 1),
                elements=self.forward.tensor(op.outputs[0]).num_elements,
            )
        elif kind is OpKind.SOFTMAX:
            # loss folded into the softmax: no upstream gradient for the probabilities
            self._emit(
                op, "", kind, [op.outputs[0]], outputs,
                elements=self.forward.tensor(op.outputs[0]).num_elements,
                **({"flops_per_element": op.attrs["flops_per_element"]} if "flops_per_element" in op.attrs else {}),
            )
        elif kind is OpKind.REDUCTION:
            self._emit(op, "", OpKind.POINTWISE, upstream, outputs,
                       elements=self.forward.tensor(op.inputs[0]).num_elements)
        elif kind is OpKind.BATCH_NORM:
            self._emit(op, "", kind, upstream + list(op.inputs[:2]), outputs,
                       elements=self.forward.tensor(op.inputs[0]).num_elements)
        elif kind is OpKind.CONCAT:
            self._emit(op, "", OpKind.SPLIT, upstream, outputs)
        elif kind is OpKind.SPLIT:
            self._emit(op, "", OpKind.CONCAT, upstream, outputs)
        elif kind is OpKind.POOL:
            self._emit(op, "", kind, upstream + [op.inputs[0]], outputs,
                       role="grad", window=op.attrs.get("window", 1))
        elif kind is OpKind.IDENTITY:
            self._emit(op, "", kind, upstream, outputs)

    def _weight_updates(self) -> Tuple[Dict[str, str], Dict[str, str]]:
        updates: Dict[str, str] = {}
        dense: Dict[str, str] = {}
        for weight_id in sorted(self.weight_ids):
            weight = self.forward.tensor(weight_id)
            optimizer = self.optimizer_for(weight_id)
            sparse = False
            if self.partials.get(weight_id):
                gradient = self._upstream(weight_id, {})
                dense[weight_id] = gradient
            elif self.sparse_rows.get(weight_id):
                rows = self.sparse_rows[weight_id]
                sparse = True
                gradient = rows[0]
                if len(rows) > 1:
                    # several lookups share the table
                    gradient = f"grad/{weight_id}/rows"
                    first = self.graph.tensor(rows[0])
                    self.graph.add_tensor(gradient, first.shape, TensorKind.ACTIVATION, first.dtype_bytes)
                    self.graph.add_op(
                        f"accumulate/{weight_id}",
                        OpKind.POINTWISE,
                        rows,
                        [gradient],
                        flops_per_element=0,
                        gradient_of=weight_id,
                    )
            else:
                gradient = self._upstream(weight_id, {})
            next_id = f"{weight_id}/next"
            self.graph.add_tensor(next_id, weight.shape, TensorKind.WEIGHT, weight.dtype_bytes)
            op_id = f"update/{weight_id}"
            self.graph.add_op(
                op_id,
                OpKind.WEIGHT_UPDATE,
                [weight_id, gradient],
                [next_id],
                weight=weight_id,
                flops_per_weight=optimizer.flops_per_weight,
                passes=optimizer.passes,
                sparse=sparse,
                state_slots=optimizer.state_slots,
            )
            updates[weight_id] = op_id
        return updates, dense


def derive_training_graph(
    forward: ComputeGraph,
    optimizer: OptimizerSpec = SGD,
    layer_optimizers: Optional[Mapping[str, OptimizerSpec]] = None,
) -> TrainingStepGraph:
    """Append backward and weight-update ops to a validated forward graph.

    MatMul and Conv2D emit two gradient ops (inputs and weights), each
    as costly as the forward op; every other differentiable op emits one
    gradient op of equal cost. Embedding tables receive scatter-added
    row gradients and a full-table update.

    ``layer_optimizers`` overrides the optimizer per layer, keyed by the
    leading path component of the weight id (``{"embedding": ADAM}``).
    """
    if not forward.frozen:
        forward.validate()
    if forward.ops and not forward.weights():
        raise MissingWeightDeclaration(
            f"Graph '{forward.name}' declares no weight tensors to train"
        )
    return _Deriver(forward, optimizer, layer_optimizers).run()


def forward_flops(step: TrainingStepGraph) -> DimExpr:
    graph = step.graph
    return total(op_alg_flops(graph, graph.op(op_id)) for op_id in step.forward_ops)


def training_flops(step: TrainingStepGraph) -> DimExpr:
    graph = step.graph
    return total(op_alg_flops(graph, op) for op in graph.ops.values())


def training_flops_ratio(step: TrainingStepGraph, binding: Binding) -> float:
    forward = forward_flops(step).evaluate_exact(binding)
    if forward == 0:
        raise DivisionByZeroForward(f"Graph '{step.name}' has no forward FLOPs")
    return float(training_flops(step).evaluate_exact(binding) / forward)


def as_compute_graph(g: Union[ComputeGraph, TrainingStepGraph]) -> ComputeGraph:
    return g.graph if isinstance(g, TrainingStepGraph) else g
