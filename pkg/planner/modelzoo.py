"""Forward compute graphs for the five studied model families.

Recurrent layers are built once and carry ``unroll_count``; identical
stacked layers may also carry ``repeat``. The graph stays acyclic and
the cost of all timesteps is analytic in ``q``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from planner.autodiff import OptimizerSpec, SGD, TrainingStepGraph, derive_training_graph
from planner.exceptions import InvalidConfig
from planner.graph import ComputeGraph, OpKind, TensorKind
from planner.model_config import ModelConfig, layer_blocks
from planner.op_catalog import TRANSCENDENTAL_FLOPS
from planner.symexpr import DimExpr, Operand, as_expr, sym

logger = logging.getLogger(__name__)

# bias add plus sigmoid/tanh
GATE_FLOPS = TRANSCENDENTAL_FLOPS + 1
# c = f*c_prev + i*g
CELL_FLOPS = 3
# h = o * tanh(c)
HIDDEN_FLOPS = TRANSCENDENTAL_FLOPS + 1


@dataclass(frozen=True)
class Dims:
    h: DimExpr
    v: DimExpr
    q: DimExpr
    b: DimExpr
    e: DimExpr
    r: Optional[DimExpr]


def _dims(cfg: ModelConfig) -> Tuple[Dims, Dict[str, int]]:
    defaults = {"h": cfg.hidden, "v": cfg.vocab, "q": cfg.seq_len, "b": cfg.subbatch}
    e = sym("h")
    if cfg.embedding is not None and cfg.embedding != cfg.hidden:
        e = sym("e")
        defaults["e"] = cfg.embedding
    r = None
    if cfg.projection is not None:
        r = sym("r")
        defaults["r"] = cfg.projection
    return Dims(sym("h"), sym("v"), sym("q"), sym("b"), e, r), defaults


class _GraphBuilder:
    """Thin helper that names tensors after the op producing them."""

    def __init__(self, name: str, defaults: Dict[str, int]) -> None:
        self.graph = ComputeGraph(name, defaults)

    def weight(self, tensor_id: str, shape: Sequence[Operand]) -> str:
        self.graph.add_tensor(tensor_id, shape, TensorKind.WEIGHT)
        return tensor_id

    def input(self, tensor_id: str, shape: Sequence[Operand], io: bool = True) -> str:
        self.graph.add_tensor(tensor_id, shape, TensorKind.INPUT)
        if io:
            self.graph.mark_io_input(tensor_id)
        return tensor_id

    def op(
        self,
        op_id: str,
        kind: OpKind,
        inputs: Sequence[str],
        shape: Sequence[Operand],
        unroll: Optional[DimExpr] = None,
        output_kind: TensorKind = TensorKind.ACTIVATION,
        **attrs: object,
    ) -> str:
        self.graph.add_tensor(op_id, shape, output_kind)
        if unroll is not None:
            attrs["unroll_count"] = unroll
        self.graph.add_op(op_id, kind, inputs, [op_id], **attrs)
        return op_id


def _lstm_layer(
    gb: _GraphBuilder,
    prefix: str,
    x: str,
    in_dim: DimExpr,
    h: DimExpr,
    unroll: DimExpr,
    lead: List[DimExpr],
    projection: Optional[DimExpr] = None,
    layers: Optional[DimExpr] = None,
) -> Tuple[str, DimExpr]:
    """One LSTM layer: four gates over [x, h_prev], optional output projection.

    With ``layers`` the op stands for that many identical stacked layers:
    weights gain a leading layer axis and every op carries ``repeat``.
    """
    state_dim = projection if projection is not None else h
    stacked: Dict[str, object] = {"repeat": layers} if layers is not None else {}
    axis: List[Operand] = [layers] if layers is not None else []
    h_prev = gb.input(f"{prefix}/h_prev", lead + [state_dim], io=False)
    c_prev = gb.input(f"{prefix}/c_prev", lead + [h], io=False)
    kernel = gb.weight(f"{prefix}/kernel", axis + [in_dim + state_dim, 4 * h])
    bias = gb.weight(f"{prefix}/bias", axis + [4 * h])

    xh = gb.op(f"{prefix}/concat", OpKind.CONCAT, [x, h_prev], lead + [in_dim + state_dim], unroll, **stacked)
    gates = gb.op(f"{prefix}/gates", OpKind.MATMUL, [xh, kernel], lead + [4 * h], unroll, **stacked)
    acts = gb.op(
        f"{prefix}/activations", OpKind.POINTWISE, [gates, bias], lead + [4 * h], unroll,
        flops_per_element=GATE_FLOPS, **stacked,
    )
    cell = gb.op(
        f"{prefix}/cell", OpKind.POINTWISE, [c_prev, acts], lead + [h], unroll,
        flops_per_element=CELL_FLOPS, **stacked,
    )
    hidden = gb.op(
        f"{prefix}/hidden", OpKind.POINTWISE, [cell, acts], lead + [h], unroll,
        flops_per_element=HIDDEN_FLOPS, **stacked,
    )
    out = hidden
    if projection is not None:
        proj_w = gb.weight(f"{prefix}/projection", [h, projection])
        out = gb.op(f"{prefix}/project", OpKind.MATMUL, [hidden, proj_w], lead + [projection], unroll)
    gb.graph.add_recurrence(h_prev, out)
    gb.graph.add_recurrence(c_prev, cell)
    return out, state_dim


def _softmax_output(
    gb: _GraphBuilder,
    x: str,
    in_dim: DimExpr,
    v: DimExpr,
    unroll: Optional[DimExpr],
    lead: List[DimExpr],
) -> str:
    kernel = gb.weight("output/kernel", [in_dim, v])
    bias = gb.weight("output/bias", [v])
    logits = gb.op("output/logits", OpKind.MATMUL, [x, kernel], lead + [v], unroll)
    biased = gb.op("output/bias_add", OpKind.POINTWISE, [logits, bias], lead + [v], unroll)
    labels = gb.input("labels", lead)
    probs = gb.op(
        "output/softmax", OpKind.SOFTMAX, [biased, labels], lead + [v], unroll,
        output_kind=TensorKind.OUTPUT,
    )
    gb.graph.mark_io_output(probs)
    return probs


def stacks_layers(cfg: ModelConfig) -> bool:
    """True when the word LM's recurrent layers are one op repeated ``l`` times."""
    return (
        cfg.domain == "word_lm"
        and cfg.stack_layers
        and cfg.projection is None
        and cfg.embedding_dim == cfg.hidden
    )


def build_word_lm(cfg: ModelConfig) -> ComputeGraph:
    """Embedding, ``layers`` LSTM layers and a softmax over the vocabulary.

    Weights: v*e table, (in + state) x 4h per layer, state x v output.
    With e = h and no projection the layers are identical, so they are
    built once with a symbolic layer count ``l`` and the parameters are
    8h^2 l + 2hv plus O(h) biases. The projection ``r`` shrinks the
    state of the last recurrent layer and needs the layers built one by one.
    """
    if cfg.domain != "word_lm":
        raise InvalidConfig(f"word LM builder got domain '{cfg.domain}'")
    d, defaults = _dims(cfg)
    stacked = stacks_layers(cfg)
    if stacked:
        defaults["l"] = cfg.layers
    gb = _GraphBuilder("word_lm", defaults)
    lead = [d.b]
    ids = gb.input("ids", lead)
    table = gb.weight("embedding/table", [d.v, d.e])
    x = gb.op("embedding/lookup", OpKind.EMBEDDING_LOOKUP, [ids, table], lead + [d.e], d.q)
    width = d.e
    if stacked:
        x, width = _lstm_layer(gb, "lstm", x, width, d.h, d.q, lead, layers=sym("l"))
    else:
        for layer in range(cfg.layers):
            projection = d.r if layer == cfg.layers - 1 else None
            x, width = _lstm_layer(gb, f"lstm{layer}", x, width, d.h, d.q, lead, projection)
    _softmax_output(gb, x, width, d.v, d.q, lead)
    return _finish(gb)


def build_char_rhn(cfg: ModelConfig) -> ComputeGraph:
    """Small embedding, deep recurrent-highway layers, small output layer."""
    if cfg.domain != "char_lm":
        raise InvalidConfig(f"char LM builder got domain '{cfg.domain}'")
    d, defaults = _dims(cfg)
    gb = _GraphBuilder("char_lm", defaults)
    lead = [d.b]
    ids = gb.input("ids", lead)
    table = gb.weight("embedding/table", [d.v, d.h])
    x = gb.op("embedding/lookup", OpKind.EMBEDDING_LOOKUP, [ids, table], lead + [d.h], d.q)
    for layer in range(cfg.layers):
        prefix = f"rhn{layer}"
        s_prev = gb.input(f"{prefix}/s_prev", lead + [d.h], io=False)
        state = s_prev
        for depth in range(cfg.rhn_depth):
            sub = f"{prefix}/sub{depth}"
            # H and T gates, each 2h x h
            kernel = gb.weight(f"{sub}/kernel", [2 * d.h, 2 * d.h])
            bias = gb.weight(f"{sub}/bias", [2 * d.h])
            z = gb.op(f"{sub}/concat", OpKind.CONCAT, [x, state], lead + [2 * d.h], d.q)
            gates = gb.op(f"{sub}/gates", OpKind.MATMUL, [z, kernel], lead + [2 * d.h], d.q)
            acts = gb.op(
                f"{sub}/activations", OpKind.POINTWISE, [gates, bias], lead + [2 * d.h], d.q,
                flops_per_element=GATE_FLOPS,
            )
            state = gb.op(
                f"{sub}/highway", OpKind.POINTWISE, [state, acts], lead + [d.h], d.q,
                flops_per_element=CELL_FLOPS,
            )
        gb.graph.add_recurrence(s_prev, state)
        x = state
    _softmax_output(gb, x, d.h, d.v, d.q, lead)
    return _finish(gb)


def _bidirectional_encoder(
    gb: _GraphBuilder,
    cfg: ModelConfig,
    x: str,
    in_dim: DimExpr,
    h: DimExpr,
    unroll: DimExpr,
    lead: List[DimExpr],
    pool_after: Sequence[int] = (),
) -> Tuple[str, DimExpr]:
    """Stacked (bi-)LSTM encoder; returns the top output and its unroll count."""
    width = in_dim
    for layer in range(cfg.layers):
        prefix = f"encoder/lstm{layer}"
        forward, _ = _lstm_layer(gb, f"{prefix}/fwd", x, width, h, unroll, lead)
        if cfg.encoder_bidirectional:
            backward, _ = _lstm_layer(gb, f"{prefix}/bwd", x, width, h, unroll, lead)
            x = gb.op(f"{prefix}/merge", OpKind.POINTWISE, [forward, backward], lead + [h], unroll)
        else:
            x = forward
        width = h
        if layer + 1 in pool_after:
            unroll = unroll / 2
            x = gb.op(f"encoder/pool{layer}", OpKind.POOL, [x], lead + [h], unroll, window=2)
    return x, unroll


def _attention_decoder(
    gb: _GraphBuilder,
    cfg: ModelConfig,
    d: Dims,
    memory: str,
    source_len: DimExpr,
    location_conv: bool = False,
) -> None:
    """LSTM decoder with dot-product attention over the encoder memory.

    Weight MatMuls see two-dimensional activations; the attention
    products run per batch row on reshaped views.
    """
    u = sym("u")
    lead = [d.b]
    ids = gb.input("target_ids", lead)
    table = gb.weight("decoder/embedding/table", [d.v, d.h])
    x = gb.op("decoder/embedding/lookup", OpKind.EMBEDDING_LOOKUP, [ids, table], lead + [d.h], u)
    for layer in range(cfg.decoder_depth):
        x, _ = _lstm_layer(gb, f"decoder/lstm{layer}", x, d.h, d.h, u, lead)

    row = [d.b, as_expr(1)]
    query = gb.op("attention/query", OpKind.IDENTITY, [x], row + [d.h], u, reshape=True)
    scores = gb.op(
        "attention/scores", OpKind.MATMUL, [query, memory], row + [source_len], u, transpose_b=True
    )
    if location_conv:
        channels = cfg.attention_conv_channels
        previous = gb.input("attention/previous", [d.b, 1, source_len, 1], io=False)
        filters = gb.weight("attention/location/filters", [1, cfg.attention_conv_width, 1, channels])
        features = gb.op(
            "attention/location/conv", OpKind.CONV2D, [previous, filters],
            [d.b, 1, source_len, channels], u,
        )
        flat = gb.op(
            "attention/location/flatten", OpKind.IDENTITY, [features],
            [d.b * source_len, channels], u, reshape=True,
        )
        project = gb.weight("attention/location/projection", [channels, 1])
        location = gb.op(
            "attention/location/score", OpKind.MATMUL, [flat, project], [d.b * source_len, 1], u
        )
        location = gb.op(
            "attention/location/unflatten", OpKind.IDENTITY, [location],
            row + [source_len], u, reshape=True,
        )
        scores = gb.op(
            "attention/energies", OpKind.POINTWISE, [scores, location], row + [source_len], u
        )
    align = gb.op("attention/align", OpKind.SOFTMAX, [scores], row + [source_len], u)
    if location_conv:
        carried = gb.op(
            "attention/align_4d", OpKind.IDENTITY, [align], [d.b, 1, source_len, 1], u, reshape=True
        )
        gb.graph.add_recurrence("attention/previous", carried)
    context = gb.op("attention/context", OpKind.MATMUL, [align, memory], row + [d.h], u)
    context = gb.op("attention/context_rows", OpKind.IDENTITY, [context], lead + [d.h], u, reshape=True)
    joined = gb.op("attention/concat", OpKind.CONCAT, [x, context], lead + [2 * d.h], u)
    kernel = gb.weight("attention/kernel", [2 * d.h, d.h])
    hidden = gb.op("attention/hidden", OpKind.MATMUL, [joined, kernel], lead + [d.h], u)
    attended = gb.op(
        "attention/tanh", OpKind.POINTWISE, [hidden], lead + [d.h], u,
        flops_per_element=TRANSCENDENTAL_FLOPS,
    )
    _softmax_output(gb, attended, d.h, d.v, u, lead)


def build_nmt(cfg: ModelConfig) -> ComputeGraph:
    """Bidirectional LSTM encoder, LSTM decoder and attention."""
    if cfg.domain != "nmt":
        raise InvalidConfig(f"NMT builder got domain '{cfg.domain}'")
    d, defaults = _dims(cfg)
    defaults["u"] = cfg.decoder_len
    gb = _GraphBuilder("nmt", defaults)
    lead = [d.b]
    ids = gb.input("source_ids", lead)
    table = gb.weight("encoder/embedding/table", [d.v, d.h])
    x = gb.op("encoder/embedding/lookup", OpKind.EMBEDDING_LOOKUP, [ids, table], lead + [d.h], d.q)
    top, source_len = _bidirectional_encoder(gb, cfg, x, d.h, d.h, d.q, lead)
    memory = gb.op("encoder/memory", OpKind.CONCAT, [top], [d.b, source_len, d.h], stack=source_len)
    _attention_decoder(gb, cfg, d, memory, source_len)
    return _finish(gb)


def build_speech_attention(cfg: ModelConfig) -> ComputeGraph:
    """Pyramidal bi-LSTM encoder over audio frames, attention decoder."""
    if cfg.domain != "speech":
        raise InvalidConfig(f"speech builder got domain '{cfg.domain}'")
    d, defaults = _dims(cfg)
    defaults["u"] = cfg.decoder_len
    defaults["f"] = cfg.features
    gb = _GraphBuilder("speech", defaults)
    lead = [d.b]
    frames = gb.input("frames", lead + [sym("f")])
    top, source_len = _bidirectional_encoder(
        gb, cfg, frames, sym("f"), d.h, d.q, lead, cfg.pool_after
    )
    memory = gb.op("encoder/memory", OpKind.CONCAT, [top], [d.b, source_len, d.h], stack=source_len)
    _attention_decoder(gb, cfg, d, memory, source_len, location_conv=True)
    return _finish(gb)


class _ResNetBuilder:
    def __init__(self, gb: _GraphBuilder, b: DimExpr) -> None:
        self.gb = gb
        self.b = b
        self.convs = 0

    def conv_bn(
        self,
        prefix: str,
        x: str,
        c_in: DimExpr,
        c_out: DimExpr,
        kernel: int,
        out_size: int,
        relu: bool = True,
    ) -> str:
        gb = self.gb
        filters = gb.weight(f"{prefix}/filters", [kernel, kernel, c_in, c_out])
        shape = [self.b, out_size, out_size, c_out]
        y = gb.op(f"{prefix}/conv", OpKind.CONV2D, [x, filters], shape)
        gamma = gb.weight(f"{prefix}/bn/gamma", [c_out])
        beta = gb.weight(f"{prefix}/bn/beta", [c_out])
        y = gb.op(f"{prefix}/bn", OpKind.BATCH_NORM, [y, gamma, beta], shape)
        self.convs += 1
        if relu:
            y = gb.op(f"{prefix}/relu", OpKind.POINTWISE, [y], shape)
        return y


def build_resnet(cfg: ModelConfig) -> ComputeGraph:
    """Residual network; channel counts scale with the width multiplier ``w``."""
    if cfg.domain != "image":
        raise InvalidConfig(f"ResNet builder got domain '{cfg.domain}'")
    blocks, bottleneck = layer_blocks(cfg.resnet_depth)
    b, w = sym("b"), sym("w")
    gb = _GraphBuilder(f"resnet{cfg.resnet_depth}", {"b": cfg.subbatch, "w": cfg.width})
    rb = _ResNetBuilder(gb, b)
    size = cfg.image_size // 2
    images = gb.input("images", [b, cfg.image_size, cfg.image_size, 3])
    x = rb.conv_bn("stem", images, as_expr(3), 64 * w, 7, size)
    size //= 2
    x = gb.op("stem/maxpool", OpKind.POOL, [x], [b, size, size, 64 * w], window=9)

    expansion = 4 if bottleneck else 1
    channels = 64 * w
    for stage, count in enumerate(blocks):
        mid = (64 * 2**stage) * w
        for block in range(count):
            prefix = f"stage{stage}/block{block}"
            in_size = size
            if stage > 0 and block == 0:
                size //= 2
            out_channels = mid * expansion
            if bottleneck:
                y = rb.conv_bn(f"{prefix}/a", x, channels, mid, 1, in_size)
                y = rb.conv_bn(f"{prefix}/b", y, mid, mid, 3, size)
                y = rb.conv_bn(f"{prefix}/c", y, mid, out_channels, 1, size, relu=False)
            else:
                y = rb.conv_bn(f"{prefix}/a", x, channels, mid, 3, size)
                y = rb.conv_bn(f"{prefix}/b", y, mid, out_channels, 3, size, relu=False)
            shortcut = x
            if block == 0 and (channels != out_channels or in_size != size):
                shortcut = rb.conv_bn(f"{prefix}/shortcut", x, channels, out_channels, 1, size, relu=False)
            shape = [b, size, size, out_channels]
            added = gb.op(f"{prefix}/add", OpKind.POINTWISE, [y, shortcut], shape)
            x = gb.op(f"{prefix}/relu", OpKind.POINTWISE, [added], shape)
            channels = out_channels

    pooled = gb.op("head/avgpool", OpKind.POOL, [x], [b, 1, 1, channels], window=size * size)
    features = gb.op("head/flatten", OpKind.IDENTITY, [pooled], [b, channels], reshape=True)
    _softmax_output(gb, features, channels, as_expr(cfg.classes), None, [b])
    logger.debug("Built ResNet-%d with %d convolutions", cfg.resnet_depth, rb.convs)
    return _finish(gb)


def _finish(gb: _GraphBuilder) -> ComputeGraph:
    report = gb.graph.validate()
    logger.debug("Built %s: %d ops, %d tensors", report.graph_name, report.op_count, report.tensor_count)
    return gb.graph


BUILDERS: Dict[str, Callable[[ModelConfig], ComputeGraph]] = {
    "word_lm": build_word_lm,
    "char_lm": build_char_rhn,
    "nmt": build_nmt,
    "speech": build_speech_attention,
    "image": build_resnet,
}

MODEL_ALIASES: Dict[str, str] = {
    "word_lm": "word_lm",
    "char_lm": "char_lm",
    "char_rhn": "char_lm",
    "nmt": "nmt",
    "speech": "speech",
    "speech_attention": "speech",
    "image": "image",
    "resnet": "image",
}


def resolve_domain(model: str) -> str:
    try:
        return MODEL_ALIASES[model]
    except KeyError as exc:
        raise InvalidConfig(
            f"Unknown model '{model}', expected one of {sorted(MODEL_ALIASES)}"
        ) from exc


def build(cfg: ModelConfig) -> ComputeGraph:
    return BUILDERS[cfg.domain](cfg)


def build_training(
    cfg: ModelConfig,
    optimizer: OptimizerSpec = SGD,
    layer_optimizers: Optional[Mapping[str, OptimizerSpec]] = None,
) -> TrainingStepGraph:
    return derive_training_graph(build(cfg), optimizer, layer_optimizers)
