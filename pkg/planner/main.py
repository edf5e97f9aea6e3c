#!/usr/bin/env python
"""
Console application start
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from planner import __version__
from planner.accelerator_config import AcceleratorConfig
from planner.analyzers import CostReport, analyze
from planner.autodiff import OPTIMIZERS, derive_training_graph
from planner.case_study import CaseStudyConfig, replay_case_study
from planner.domain_constants import DomainCatalog
from planner.exceptions import (
    CapacityInfeasible,
    InvalidConfig,
    InvariantViolation,
    PlannerError,
)
from planner.graph import ComputeGraph
from planner.graph_exchange import load_graph, save_graph
from planner.manifest import RunManifest, write_csv, write_json
from planner.model_config import ModelConfig
from planner.modelzoo import build, resolve_domain, stacks_layers
from planner.parallel_planner import (
    GB,
    ParallelPlan,
    Workload,
    embedding_bytes,
    evaluate_layer_parallel,
    with_sharded_embedding,
)
from planner.perf_model import graph_step_time
from planner.requirements_projection import projection_table
from planner.scaling import project_domain
from planner.symexpr import render
from planner.sweeps import fit_requirement_models, sweep

logger = logging.getLogger(__name__)

# Graph symbols that are fixed when a model is built.
STRUCTURAL_SYMBOLS = {"l": "layers"}
PROJECT_COLUMNS = [
    "domain",
    "data_multiplier",
    "model_multiplier",
    "target_samples",
    "target_params",
    "data_units",
    "paper_data_multiplier",
    "paper_model_multiplier",
    "model_multiplier_from_published_data",
    "divergence_note",
]


def _number(text: str) -> Union[int, float]:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError as exc:
        raise InvalidConfig(f"'{text}' is not a number") from exc


def parse_assignments(items: Optional[Sequence[str]]) -> Dict[str, Union[int, float]]:
    """``["h=1024,l=2", "b=1"]`` -> ``{"h": 1024, "l": 2, "b": 1}``."""
    parsed: Dict[str, Union[int, float]] = {}
    for item in items or []:
        for pair in item.split(","):
            if not pair.strip():
                continue
            name, sep, value = pair.partition("=")
            if not sep or not name.strip():
                raise InvalidConfig(f"expected name=value, got '{pair}'")
            parsed[name.strip()] = _number(value.strip())
    return parsed


def parse_values(items: Sequence[str]) -> List[Union[int, float]]:
    return [_number(v.strip()) for item in items for v in item.split(",") if v.strip()]


def _model_config(
    model: str, overrides: Dict[str, Any], bindings: Dict[str, Any]
) -> Tuple[ModelConfig, Dict[str, Any]]:
    """Model defaults with overrides; structural symbols in the binding become overrides.

    A word LM with stacked layers keeps ``l`` as a graph symbol.
    """
    cfg = ModelConfig.default_config(resolve_domain(model))
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    structural: Dict[str, str] = {} if stacks_layers(cfg) else STRUCTURAL_SYMBOLS
    fixed = {structural[name]: int(value) for name, value in bindings.items() if name in structural}
    remaining = {name: value for name, value in bindings.items() if name not in structural}
    return (cfg.with_overrides(**fixed) if fixed else cfg), remaining


def _load_accelerator(spec: Optional[str]) -> AcceleratorConfig:
    if spec is None or spec == "default":
        return AcceleratorConfig.default_config()
    return AcceleratorConfig.default_config(spec)


def _load_catalog(path: Optional[str]) -> DomainCatalog:
    return DomainCatalog.default_config(path)


def _graph_for(args: argparse.Namespace) -> Tuple[ComputeGraph, Dict[str, Any], Dict[str, Any]]:
    bindings = parse_assignments(args.bind)
    if args.graph:
        graph = load_graph(args.graph)
        config: Dict[str, Any] = {"graph_file": args.graph}
    else:
        cfg, bindings = _model_config(args.model, parse_assignments(args.set), bindings)
        graph = build(cfg)
        config = {"model": cfg.to_dict()}
    return graph, bindings, config


def _print_report(report: CostReport, binding: Optional[Dict[str, Any]]) -> None:
    print(f"graph: {report.graph_name}")
    print(f"params: {render(report.parameter_count)}")
    print(f"matrix_params: {render(report.matrix_parameter_count)}")
    print(f"flops: {render(report.total_flops)}")
    print(f"bytes: {render(report.total_bytes)}")
    print(f"io_bytes: {render(report.io_bytes)}")
    if binding is None:
        return
    resolved = report.graph.resolve_binding(binding)
    print("binding: " + ", ".join(f"{k}={v:g}" for k, v in sorted(resolved.items())))
    print(f"  params:          {report.parameter_count.evaluate(resolved):.6g}")
    print(f"  flops:           {report.flops(resolved):.6g}")
    print(f"  bytes:           {report.bytes(resolved):.6g}")
    print(f"  intensity:       {report.op_intensity(resolved):.6g} FLOP/B")
    print(f"  io_bytes:        {report.io_bytes.evaluate(resolved):.6g}")
    print(f"  footprint_bytes: {report.footprint_bytes(resolved):.6g}")


def cmd_analyze(args: argparse.Namespace) -> int:
    graph, bindings, config = _graph_for(args)
    optimizer = OPTIMIZERS[args.optimizer]
    report = analyze(derive_training_graph(graph, optimizer) if args.training else graph)
    binding = bindings if args.bind else None
    _print_report(report, binding)
    if args.out:
        manifest = RunManifest(
            command="analyze",
            config={**config, "bindings": bindings, "training": args.training, "optimizer": args.optimizer},
            outputs=(args.out,),
        )
        write_json(report.to_dict(binding), args.out, manifest)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    values = parse_values(args.values)
    if not values:
        raise InvalidConfig("--values needs at least one number")
    cfg, fixed = _model_config(args.model, parse_assignments(args.set), parse_assignments(args.bind))
    table = sweep(
        cfg,
        args.axis,
        values,
        fixed=fixed,
        optimizer=OPTIMIZERS[args.optimizer],
        training=args.training,
        footprint=not args.no_footprint,
        n_jobs=args.jobs,
    )
    if args.out:
        manifest = RunManifest(
            command="sweep",
            config={
                "model": cfg.to_dict(),
                "axis": args.axis,
                "values": values,
                "bindings": fixed,
                "training": args.training,
                "optimizer": args.optimizer,
            },
            outputs=(args.out,),
        )
        write_csv(table, args.out, manifest, index=True)
    else:
        print(table.to_csv(lineterminator="\n"), end="")
    if args.fit:
        subbatch = fixed.get("b", cfg.subbatch)
        fit = fit_requirement_models(table, subbatch, args.min_params)
        print(
            f"gamma={fit.gamma:.6g} lambda={fit.lam:.6g} mu={fit.mu:.6g} delta={fit.delta:.6g} "
            + " ".join(f"r2_{k}={v:.4f}" for k, v in sorted(fit.r2.items()))
        )
    return 0


def cmd_project(args: argparse.Namespace) -> int:
    catalog = _load_catalog(args.constants)
    domains = list(catalog.domains) if args.all else [args.domain]
    records = [catalog.get(domain) for domain in domains]
    table = pd.DataFrame(
        [project_domain(record.constants).to_dict() for record in records], columns=PROJECT_COLUMNS
    )
    config: Dict[str, Any] = {"domains": domains, "constants_version": catalog.version}
    if args.accel is not None:
        acc = _load_accelerator(args.accel)
        requirements = projection_table(catalog, acc, domains)
        table = table.merge(
            requirements.drop(columns=["data_size", "params"]), on="domain", how="left"
        )
        config["accelerator"] = acc.to_dict()
    if args.out:
        write_csv(table, args.out, RunManifest(command="project", config=config, outputs=(args.out,)))
    with pd.option_context("display.width", 200, "display.max_columns", None):
        print(table.to_string(index=False))
    return 0


def _custom_plan(path: str, acc: AcceleratorConfig) -> pd.DataFrame:
    """Evaluate one plan file: a model, its dataset and a ParallelPlan."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data: Dict[str, Any] = json.load(f)
        model = dict(data["model"])
        # layer groups name individual layers
        model.setdefault("stack_layers", False)
        cfg = ModelConfig(domain=resolve_domain(model.pop("domain")), **model)
        plan = ParallelPlan.from_dict(data["plan"])
        data_size = float(data["data_size"])
        tokens = float(data.get("tokens_per_sample", 1))
        optimizer = OPTIMIZERS[data.get("optimizer", "sgd")]
        layer_optimizers = {layer: OPTIMIZERS[name] for layer, name in data.get("layer_optimizers", {}).items()}
    except (FileNotFoundError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise InvalidConfig(f"Could not load plan from {path}: {e}") from e
    step = derive_training_graph(build(cfg), optimizer, layer_optimizers)
    workload = Workload(step=step, data_size=data_size, tokens_per_sample=tokens)
    report = evaluate_layer_parallel(workload, acc, plan)
    rows = [report]
    if plan.embedding_shards > 1:
        layer = data.get("embedding_layer", "embedding")
        table_gb = embedding_bytes(workload, layer) / GB
        rows.append(with_sharded_embedding(report, table_gb, plan.embedding_shards, name=f"{report.name} sharded"))
    if plan.n_accel == 1:
        roofline = graph_step_time(analyze(step), acc, {"b": plan.subbatch})
        logger.info("Single-device Roofline step %.3f s", roofline.step_seconds)
    table = pd.DataFrame([r.to_dict() for r in rows])
    table["status"] = [
        str(CapacityInfeasible(r.max_footprint_gb, r.capacity_gb)) if r.over_capacity else "ok"
        for r in rows
    ]
    return table


def cmd_plan(args: argparse.Namespace) -> int:
    acc = _load_accelerator(args.accel)
    config: Dict[str, Any] = {"accelerator": acc.to_dict()}
    if args.plan:
        table = _custom_plan(args.plan, acc)
        config["plan_file"] = args.plan
        footer = None
    else:
        path = None if args.case_study == "default" else args.case_study
        study = CaseStudyConfig.default_config(path)
        result = replay_case_study(study, acc)
        table = result.table()
        config.update({"case_study": study.name, "case_study_version": study.version})
        footer = f"projection speedup: {result.reduction:.2f}x"
        if result.published_reduction is not None:
            footer += f" (published {result.published_reduction:g}x)"
    if args.out:
        write_csv(table, args.out, RunManifest(command="plan", config=config, outputs=(args.out,)))
    with pd.option_context("display.width", 250, "display.max_columns", None):
        print(table.to_string(index=False))
    if footer:
        print(footer)
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    cfg, _ = _model_config(args.model, parse_assignments(args.set), {})
    graph = build(cfg)
    if args.training:
        graph = derive_training_graph(graph, OPTIMIZERS[args.optimizer]).graph
    save_graph(graph, args.out)
    print(f"Wrote {graph.name} ({len(graph.ops)} ops) to {args.out}")
    return 0


def _model_arguments(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--model", required=required, help="Model name, e.g. word_lm, resnet")
    parser.add_argument(
        "--set",
        action="append",
        default=None,
        help="Model option overrides, e.g. hidden=4096,layers=4",
    )
    parser.add_argument(
        "--optimizer",
        choices=sorted(OPTIMIZERS),
        default="sgd",
        help="Optimizer applied to the training step (default: sgd)",
    )
    parser.add_argument(
        "--training",
        action="store_true",
        default=False,
        help="Analyze the forward, backward and update step instead of the forward graph",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capacity-planner",
        description="Compute-graph cost analysis and training capacity planning",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Increase log output (-v info, -vv debug)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    analyze_parser = commands.add_parser("analyze", help="Symbolic and evaluated costs of one graph")
    source = analyze_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--graph", help="Graph-exchange JSON file")
    source.add_argument("--model", help="Model name, e.g. word_lm, resnet")
    analyze_parser.add_argument("--set", action="append", default=None, help="Model option overrides")
    analyze_parser.add_argument(
        "--bind", action="append", default=None, help="Symbol values, e.g. h=1024,b=1"
    )
    analyze_parser.add_argument("--optimizer", choices=sorted(OPTIMIZERS), default="sgd")
    analyze_parser.add_argument("--training", action="store_true", default=False)
    analyze_parser.add_argument("--out", help="Write the report as JSON")
    analyze_parser.set_defaults(handler=cmd_analyze)

    sweep_parser = commands.add_parser("sweep", help="Requirements over one model dimension")
    _model_arguments(sweep_parser)
    sweep_parser.add_argument("--axis", required=True, help="Graph symbol or model option to vary")
    sweep_parser.add_argument("--values", action="append", required=True, help="Comma-separated values")
    sweep_parser.add_argument("--bind", action="append", default=None, help="Fixed symbol values")
    sweep_parser.add_argument("--out", help="Write the table as CSV")
    sweep_parser.add_argument("--jobs", type=int, default=1, help="Parallel footprint workers")
    sweep_parser.add_argument("--no-footprint", action="store_true", default=False)
    sweep_parser.add_argument("--fit", action="store_true", default=False, help="Print the asymptotic fits")
    sweep_parser.add_argument("--min-params", type=float, default=0.0, help="Fit only rows above this size")
    sweep_parser.set_defaults(handler=cmd_sweep)

    project_parser = commands.add_parser("project", help="Data and model growth per domain")
    which = project_parser.add_mutually_exclusive_group(required=True)
    which.add_argument("--domain", help="Domain name, e.g. nmt")
    which.add_argument("--all", action="store_true", default=False)
    project_parser.add_argument("--constants", help="Domain constants JSON file")
    project_parser.add_argument(
        "--accel", nargs="?", const="default", default=None, help="Accelerator JSON file or 'default'"
    )
    project_parser.add_argument("--out", help="Write the table as CSV")
    project_parser.set_defaults(handler=cmd_project)

    plan_parser = commands.add_parser("plan", help="Parallel training plans")
    what = plan_parser.add_mutually_exclusive_group(required=True)
    what.add_argument(
        "--case-study", nargs="?", const="default", default=None, help="Case-study JSON file or 'default'"
    )
    what.add_argument("--plan", help="Plan JSON file")
    plan_parser.add_argument("--accel", default=None, help="Accelerator JSON file")
    plan_parser.add_argument("--out", help="Write the table as CSV")
    plan_parser.set_defaults(handler=cmd_plan)

    export_parser = commands.add_parser("export", help="Write a model as a graph-exchange file")
    _model_arguments(export_parser)
    export_parser.add_argument("--out", required=True, help="Output JSON path")
    export_parser.set_defaults(handler=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function of the application."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.handler(args))
    except InvariantViolation as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 2
    except PlannerError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
