from __future__ import annotations

import json
from typing import Any, Dict

from planner.exceptions import GraphFormatError, PlannerError
from planner.graph import ComputeGraph, OpKind, TensorKind
from planner.symexpr import DimExpr, parse, render

FORMAT_VERSION = 1


def _encode_attr(value: Any) -> Any:
    if isinstance(value, DimExpr):
        return {"expr": render(value)}
    return value


def _decode_attr(value: Any) -> Any:
    if isinstance(value, dict) and set(value) == {"expr"}:
        return parse(value["expr"])
    return value


def graph_to_dict(graph: ComputeGraph) -> Dict[str, Any]:
    return {
        "version": FORMAT_VERSION,
        "name": graph.name,
        "symbols": [
            {"name": name, "default": graph.symbol_defaults.get(name)}
            for name in graph.declared_symbols()
        ],
        "tensors": [
            {
                "id": t.id,
                "shape": [render(d) for d in t.shape],
                "dtype_bytes": t.dtype_bytes,
                "kind": t.kind.value,
            }
            for t in graph.tensors.values()
        ],
        "ops": [
            {
                "id": op.id,
                "kind": op.kind.value,
                "attrs": {k: _encode_attr(v) for k, v in sorted(op.attrs.items())},
                "inputs": list(op.inputs),
                "outputs": list(op.outputs),
            }
            for op in graph.ops.values()
        ],
        "io_inputs": list(graph.io_inputs),
        "io_outputs": list(graph.io_outputs),
        "recurrences": dict(sorted(graph.recurrences.items())),
    }


def graph_from_dict(data: Dict[str, Any], validate: bool = True) -> ComputeGraph:
    if data.get("version") != FORMAT_VERSION:
        raise GraphFormatError(f"Unsupported graph format version: {data.get('version')}")
    try:
        defaults = {
            s["name"]: s["default"] for s in data.get("symbols", []) if s.get("default") is not None
        }
        graph = ComputeGraph(data.get("name", "graph"), defaults)
        for t in data["tensors"]:
            graph.add_tensor(
                t["id"],
                [parse(d) for d in t["shape"]],
                TensorKind(t.get("kind", "activation")),
                int(t.get("dtype_bytes", 4)),
            )
        for op in data["ops"]:
            attrs = {k: _decode_attr(v) for k, v in op.get("attrs", {}).items()}
            graph.add_op(op["id"], OpKind(op["kind"]), op["inputs"], op["outputs"], **attrs)
        for tensor_id in data.get("io_inputs", []):
            graph.mark_io_input(tensor_id)
        for tensor_id in data.get("io_outputs", []):
            graph.mark_io_output(tensor_id)
        for state, carried in data.get("recurrences", {}).items():
            graph.add_recurrence(state, carried)
    except (KeyError, TypeError) as exc:
        raise GraphFormatError(f"Malformed graph document: missing or invalid {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, PlannerError):
            raise
        raise GraphFormatError(f"Malformed graph document: {exc}") from exc
    if validate:
        graph.validate()
    return graph


def save_graph(graph: ComputeGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(graph_to_dict(graph), f, indent=2)
        f.write("\n")


def load_graph(path: str, validate: bool = True) -> ComputeGraph:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise GraphFormatError(f"Graph file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"Graph file {path} is not valid JSON: {exc}") from exc
    return graph_from_dict(data, validate=validate)
