"""Per-kind algorithmic cost rules and shape checks.

FLOPs count only the mathematical calculation; bytes are the inputs
an op reads plus the outputs it writes, with no cache or intermediate
traffic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from planner.exceptions import ShapeMismatch
from planner.graph import ComputeGraph, OpKind, OpNode, TensorKind, TensorSpec
from planner.symexpr import Binding, DimExpr, as_expr, product

# Pointwise transcendental cost (sigmoid, tanh) per element
TRANSCENDENTAL_FLOPS = 4
SOFTMAX_FLOPS_PER_ELEMENT = 5
BATCH_NORM_FLOPS_PER_ELEMENT = 8
SGD_FLOPS_PER_WEIGHT = 2
SGD_WEIGHT_PASSES = 3


@dataclass(frozen=True)
class Arity:
    min_inputs: int
    max_inputs: Optional[int]
    min_outputs: int
    max_outputs: Optional[int]


SIGNATURES: Dict[OpKind, Arity] = {
    OpKind.MATMUL: Arity(2, 2, 1, 1),
    OpKind.CONV2D: Arity(2, 2, 1, 1),
    OpKind.POINTWISE: Arity(1, None, 1, None),
    OpKind.EMBEDDING_LOOKUP: Arity(2, 2, 1, 1),
    OpKind.REDUCTION: Arity(1, 1, 1, 1),
    OpKind.SOFTMAX: Arity(1, 2, 1, 1),
    OpKind.BATCH_NORM: Arity(1, 3, 1, 3),
    OpKind.CONCAT: Arity(1, None, 1, 1),
    OpKind.SPLIT: Arity(1, 1, 1, None),
    OpKind.POOL: Arity(1, 2, 1, 1),
    OpKind.WEIGHT_UPDATE: Arity(2, 2, 1, 1),
    OpKind.IDENTITY: Arity(1, 1, 1, 1),
}

_SHARED_ACROSS_TIMESTEPS = (TensorKind.WEIGHT, TensorKind.GRADIENT)


def stacked_shape(graph: ComputeGraph, op: OpNode, tensor_id: str) -> Tuple[DimExpr, ...]:
    """Shape one layer of a repeated op sees: shared tensors drop their leading layer axis."""
    tensor = graph.tensor(tensor_id)
    layers = op.repeat
    if layers is not None and tensor.kind in _SHARED_ACROSS_TIMESTEPS and tensor.shape and tensor.shape[0] == layers:
        return tuple(tensor.shape[1:])
    return tuple(tensor.shape)


def matmul_dims(graph: ComputeGraph, op: OpNode) -> Tuple[DimExpr, DimExpr, DimExpr, DimExpr]:
    """Return (batch, m, n, k) for a MatMul op from its operand shapes."""
    a = stacked_shape(graph, op, op.inputs[0])
    b = stacked_shape(graph, op, op.inputs[1])
    if len(a) < 2 or len(b) < 2:
        raise ShapeMismatch(op.id, "MatMul operands need at least two dimensions")
    a_rows, a_cols = (a[-1], a[-2]) if op.attrs.get("transpose_a") else (a[-2], a[-1])
    b_rows, b_cols = (b[-1], b[-2]) if op.attrs.get("transpose_b") else (b[-2], b[-1])
    if a_cols != b_rows:
        raise ShapeMismatch(op.id, f"inner dims {a_cols} vs {b_rows}")
    leading = a[:-2] if len(a) > 2 else b[:-2]
    batch = op.attrs.get("batch")
    batch_expr = as_expr(batch) if batch is not None else product(leading)
    return batch_expr, a_rows, b_cols, a_cols


def _conv_filter_and_output(graph: ComputeGraph, op: OpNode) -> Tuple[TensorSpec, TensorSpec]:
    role = op.attrs.get("role", "forward")
    if role == "forward":
        return graph.tensor(op.inputs[1]), graph.tensor(op.outputs[0])
    if role == "input_grad":
        return graph.tensor(op.inputs[1]), graph.tensor(op.inputs[0])
    if role == "filter_grad":
        return graph.tensor(op.outputs[0]), graph.tensor(op.inputs[1])
    raise ShapeMismatch(op.id, f"unknown Conv2D role '{role}'")


def conv_gemm_dims(graph: ComputeGraph, op: OpNode, binding: Binding) -> Tuple[float, float, float]:
    """(m, n, k) of the implicit GEMM behind a Conv2D op or its gradients."""
    weight, _ = _conv_filter_and_output(graph, op)
    kh, kw, cin, cout = (d.evaluate(binding) for d in weight.shape)
    role = op.attrs.get("role", "forward")
    if role == "filter_grad":
        positions = graph.tensor(op.inputs[1]).num_elements.evaluate(binding) / cout
        return kh * kw * cin, cout, positions
    elements = graph.tensor(op.outputs[0]).num_elements.evaluate(binding)
    if role == "input_grad":
        return elements / cin, cin, kh * kw * cout
    return elements / cout, cout, kh * kw * cin


def _check_arity(op: OpNode) -> None:
    arity = SIGNATURES[op.kind]
    n_in, n_out = len(op.inputs), len(op.outputs)
    if n_in < arity.min_inputs or (arity.max_inputs is not None and n_in > arity.max_inputs):
        raise ShapeMismatch(op.id, f"{op.kind.value} takes {arity.min_inputs}..{arity.max_inputs} inputs, got {n_in}")
    if n_out < arity.min_outputs or (arity.max_outputs is not None and n_out > arity.max_outputs):
        raise ShapeMismatch(op.id, f"{op.kind.value} takes {arity.min_outputs}..{arity.max_outputs} outputs, got {n_out}")


def check_shapes(graph: ComputeGraph, op: OpNode) -> None:
    """Raise ShapeMismatch when attributes and tensor shapes disagree."""
    _check_arity(op)
    shapes = [graph.tensor(t).shape for t in op.inputs]
    out_shapes = [graph.tensor(t).shape for t in op.outputs]
    is_gradient = "gradient_of" in op.attrs

    if op.kind is OpKind.MATMUL:
        batch, m, n, k = matmul_dims(graph, op)
        out = stacked_shape(graph, op, op.outputs[0])
        if len(out) < 2 or (out[-2], out[-1]) != (m, n):
            raise ShapeMismatch(op.id, f"output {[str(d) for d in out]} is not [{m}, {n}]")
        if product(out) != batch * m * n:
            raise ShapeMismatch(op.id, "output batch dimensions do not match operands")
        for name, expected in (("m", m), ("n", n), ("k", k)):
            declared = op.attrs.get(name)
            if declared is not None and as_expr(declared) != expected:
                raise ShapeMismatch(op.id, f"attribute {name}={declared} but shapes give {expected}")
    elif op.kind is OpKind.CONV2D:
        weight, output = _conv_filter_and_output(graph, op)
        if len(weight.shape) != 4 or len(output.shape) != 4:
            raise ShapeMismatch(op.id, "Conv2D expects NHWC activations and HWIO filters")
        if weight.shape[3] != output.shape[3]:
            raise ShapeMismatch(op.id, f"output channels {output.shape[3]} vs filter {weight.shape[3]}")
        if op.attrs.get("role", "forward") == "forward" and shapes[0][3] != weight.shape[2]:
            raise ShapeMismatch(op.id, f"input channels {shapes[0][3]} vs filter {weight.shape[2]}")
    elif op.kind is OpKind.EMBEDDING_LOOKUP and not op.attrs.get("scatter"):
        ids, table = shapes
        out = out_shapes[0]
        if tuple(out) != tuple(ids) + (table[-1],):
            raise ShapeMismatch(op.id, "lookup output must be ids shape plus embedding width")
    elif op.kind is OpKind.IDENTITY and op.attrs.get("reshape"):
        if product(out_shapes[0]) != product(shapes[0]):
            raise ShapeMismatch(op.id, "reshape changes the element count")
    elif op.kind in (OpKind.POINTWISE, OpKind.SOFTMAX, OpKind.IDENTITY) and not is_gradient:
        if out_shapes[0] != shapes[0]:
            raise ShapeMismatch(op.id, f"{op.kind.value} output shape differs from first input")
    elif op.kind is OpKind.CONCAT and "stack" in op.attrs and not is_gradient:
        # gathers the per-timestep copies of one tensor along a new time axis
        source = shapes[0]
        expected = tuple(source[:-1]) + (as_expr(op.attrs["stack"]),) + tuple(source[-1:])
        if len(shapes) != 1 or tuple(out_shapes[0]) != expected:
            raise ShapeMismatch(op.id, "stacked output must insert the time axis before the width")
    elif op.kind is OpKind.CONCAT and not is_gradient:
        out = out_shapes[0]
        if any(s[:-1] != out[:-1] for s in shapes):
            raise ShapeMismatch(op.id, "Concat inputs disagree on leading dims")
        if sum((s[-1] for s in shapes), DimExpr()) != out[-1]:
            raise ShapeMismatch(op.id, "Concat widths do not sum to the output width")
    elif op.kind is OpKind.SPLIT and not is_gradient:
        source = shapes[0]
        if sum((s[-1] for s in out_shapes), DimExpr()) != source[-1]:
            raise ShapeMismatch(op.id, "Split widths do not sum to the input width")
    elif op.kind is OpKind.WEIGHT_UPDATE:
        if shapes[0] != shapes[1] and not op.attrs.get("sparse"):
            raise ShapeMismatch(op.id, "gradient shape differs from weight shape")


def op_alg_flops(graph: ComputeGraph, op: OpNode) -> DimExpr:
    """Algorithmic FLOPs of one op, multiplied by its timesteps and stacked layers."""
    flops = _single_pass_flops(graph, op)
    copies = op.multiplicity
    return flops * copies if copies is not None else flops


def _elements(graph: ComputeGraph, op: OpNode) -> DimExpr:
    declared = op.attrs.get("elements")
    if declared is not None:
        return as_expr(declared)
    return graph.tensor(op.outputs[0]).num_elements


def _single_pass_flops(graph: ComputeGraph, op: OpNode) -> DimExpr:
    kind = op.kind
    if kind is OpKind.MATMUL:
        batch, m, n, k = matmul_dims(graph, op)
        return 2 * batch * m * n * k
    if kind is OpKind.CONV2D:
        weight, output = _conv_filter_and_output(graph, op)
        kh, kw, cin, _ = weight.shape
        return 2 * kh * kw * cin * output.num_elements
    if kind is OpKind.POINTWISE:
        return op.attrs.get("flops_per_element", 1) * _elements(graph, op)
    if kind is OpKind.SOFTMAX:
        return op.attrs.get("flops_per_element", SOFTMAX_FLOPS_PER_ELEMENT) * _elements(graph, op)
    if kind is OpKind.BATCH_NORM:
        elements = op.attrs.get("elements")
        count = as_expr(elements) if elements is not None else graph.tensor(op.inputs[0]).num_elements
        return op.attrs.get("flops_per_element", BATCH_NORM_FLOPS_PER_ELEMENT) * count
    if kind is OpKind.REDUCTION:
        return graph.tensor(op.inputs[0]).num_elements
    if kind is OpKind.POOL:
        window = op.attrs.get("window", 1)
        source = op.outputs[0] if op.attrs.get("role", "forward") == "forward" else op.inputs[0]
        return window * graph.tensor(source).num_elements
    if kind is OpKind.WEIGHT_UPDATE:
        weights = graph.tensor(op.inputs[0]).num_elements
        return op.attrs.get("flops_per_weight", SGD_FLOPS_PER_WEIGHT) * weights
    # EmbeddingLookup, Concat, Split, Identity move data only
    return DimExpr()


def op_alg_bytes(
    graph: ComputeGraph,
    op: OpNode,
    weights_per_timestep: bool = False,
) -> DimExpr:
    """Bytes read plus bytes written.

    For unrolled or layer-repeated ops every per-copy tensor is counted
    once per copy while weights and weight gradients count once per
    traversal, unless ``weights_per_timestep`` asks for one weight read
    per step.
    """
    copies = op.multiplicity
    unroll = op.unroll_count

    def scaled(tensor: TensorSpec, amount: DimExpr) -> DimExpr:
        if tensor.kind in _SHARED_ACROSS_TIMESTEPS:
            # a stacked weight already holds every layer
            if weights_per_timestep and unroll is not None:
                return amount * unroll
            return amount
        return amount * copies if copies is not None else amount

    if op.kind is OpKind.WEIGHT_UPDATE:
        weight = graph.tensor(op.inputs[0])
        passes = op.attrs.get("passes", SGD_WEIGHT_PASSES)
        return scaled(weight, passes * weight.bytes)

    if op.kind is OpKind.EMBEDDING_LOOKUP:
        if op.attrs.get("scatter"):
            rows, ids = graph.tensor(op.inputs[0]), graph.tensor(op.inputs[1])
        else:
            ids, rows = graph.tensor(op.inputs[0]), graph.tensor(op.outputs[0])
        # index vector, gathered rows read, rows written
        return scaled(ids, ids.bytes) + scaled(rows, 2 * rows.bytes)

    total_bytes = DimExpr()
    for tensor_id in list(op.inputs) + list(op.outputs):
        tensor = graph.tensor(tensor_id)
        total_bytes = total_bytes + scaled(tensor, tensor.bytes)
    return total_bytes
