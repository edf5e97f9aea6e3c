"""Step-by-step replay of planning the training of a projected word LM.

Each stage refines the previous estimate: whole-step Roofline, per-op
cache-aware timing, data parallelism, layer parallelism and finally an
embedding table split across the layer-parallel devices.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from config.asset_env import get_asset_path
from planner.accelerator_config import AcceleratorConfig
from planner.analyzers import analyze
from planner.autodiff import OPTIMIZERS
from planner.domain_constants import DomainCatalog
from planner.exceptions import InvalidConfig
from planner.footprint import min_footprint
from planner.model_config import ModelConfig
from planner.modelzoo import build_training
from planner.parallel_planner import (
    GB,
    ParallelPlan,
    PlanReport,
    Workload,
    embedding_bytes,
    evaluate_data_parallel,
    evaluate_layer_parallel,
    with_sharded_embedding,
)
from planner.perf_model import cache_aware_step_time, roofline_step_time
from planner.requirements_projection import epoch_days, reference_step_time

logger = logging.getLogger(__name__)

STAGE_KINDS = ("roofline", "cache_aware", "data_parallel", "layer_parallel", "shard_embedding")
CASE_STUDY_COLUMNS = [
    "stage",
    "accelerators",
    "batch",
    "footprint_gb",
    "days_per_epoch",
    "utilization",
    "step_seconds",
    "paper_accelerators",
    "paper_batch",
    "paper_footprint_gb",
    "paper_days_per_epoch",
    "paper_utilization",
]


@dataclass(frozen=True)
class CaseStudyConfig:
    model: ModelConfig
    data_size: float
    tokens_per_sample: float
    stages: Tuple[Dict[str, Any], ...]
    optimizer: str = "sgd"
    layer_optimizers: Dict[str, str] = field(default_factory=dict)
    tile_policy: Dict[str, int] = field(default_factory=dict)
    published_reduction: Optional[float] = None
    name: str = "case-study"
    version: str = "unversioned"

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfig(f"Unknown optimizer '{self.optimizer}', expected one of {sorted(OPTIMIZERS)}")
        for layer, name in self.layer_optimizers.items():
            if name not in OPTIMIZERS:
                raise InvalidConfig(f"Unknown optimizer '{name}' for layer '{layer}', expected one of {sorted(OPTIMIZERS)}")
        for stage in self.stages:
            if stage.get("kind") not in STAGE_KINDS:
                raise InvalidConfig(f"Unknown stage kind '{stage.get('kind')}', expected one of {STAGE_KINDS}")

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> CaseStudyConfig:
        model = dict(data["model"])
        # stages place individual layers
        model.setdefault("stack_layers", False)
        domain = model.pop("domain")
        return CaseStudyConfig(
            model=ModelConfig(domain=domain, **model),
            data_size=float(data["data_size"]),
            tokens_per_sample=float(data["tokens_per_sample"]),
            stages=tuple(data["stages"]),
            optimizer=data.get("optimizer", "sgd"),
            layer_optimizers=dict(data.get("layer_optimizers", {})),
            tile_policy=dict(data.get("tile_policy", {})),
            published_reduction=data.get("published_reduction"),
            name=data.get("name", "case-study"),
            version=str(data.get("version", "unversioned")),
        )

    @staticmethod
    def default_config(path: Optional[str] = None) -> CaseStudyConfig:
        """Load the case-study description from the config file."""
        config_path = path or get_asset_path("case_study.json")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config_data: Dict[str, Any] = json.load(f)
            return CaseStudyConfig.from_dict(config_data)
        except (FileNotFoundError, KeyError, json.JSONDecodeError) as e:
            if path is not None:
                raise InvalidConfig(f"Could not load case study from {config_path}: {e}") from e
            logger.warning(
                "Could not load case study from %s: %s. Using fallback default values",
                config_path,
                e,
            )
            return CaseStudyConfig.from_dict(_FALLBACK_CASE_STUDY)


@dataclass(frozen=True)
class StageResult:
    name: str
    report: PlanReport
    paper: Dict[str, Any]


@dataclass(frozen=True)
class CaseStudyResult:
    stages: Tuple[StageResult, ...]
    reduction: float
    published_reduction: Optional[float]

    def stage(self, name: str) -> StageResult:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise KeyError(name)

    def table(self) -> pd.DataFrame:
        rows = []
        for stage in self.stages:
            report, paper = stage.report, stage.paper
            rows.append(
                {
                    "stage": stage.name,
                    "accelerators": report.n_accel,
                    "batch": report.global_batch,
                    "footprint_gb": _format_footprints(report.footprints_gb),
                    "days_per_epoch": report.days_per_epoch,
                    "utilization": report.utilization,
                    "step_seconds": report.step_seconds,
                    "paper_accelerators": paper.get("accelerators"),
                    "paper_batch": paper.get("batch"),
                    "paper_footprint_gb": _format_footprints(paper.get("footprint_gb", ())),
                    "paper_days_per_epoch": paper.get("days_per_epoch"),
                    "paper_utilization": paper.get("utilization"),
                }
            )
        return pd.DataFrame(rows, columns=CASE_STUDY_COLUMNS)


def _format_footprints(values: Any) -> str:
    return "{" + ", ".join(f"{v:.1f}" for v in values) + "}"


def _single_device(
    name: str,
    step_seconds: float,
    flops: float,
    footprint_gb: float,
    cfg: CaseStudyConfig,
    acc: AcceleratorConfig,
) -> PlanReport:
    subbatch = cfg.model.subbatch
    return PlanReport(
        name=name,
        n_accel=1,
        global_batch=subbatch,
        step_seconds=step_seconds,
        compute_seconds=step_seconds,
        comm_seconds=0.0,
        days_per_epoch=epoch_days(cfg.data_size, cfg.tokens_per_sample, subbatch, step_seconds),
        utilization=flops / (acc.peak_flops * step_seconds),
        footprints_gb=(footprint_gb,),
        capacity_gb=acc.mem_capacity / GB,
        flops_per_step=flops,
    )


def replay_case_study(
    cfg: Optional[CaseStudyConfig] = None,
    acc: Optional[AcceleratorConfig] = None,
    catalog: Optional[DomainCatalog] = None,
) -> CaseStudyResult:
    """Evaluate every configured stage and the speedup of the projected model."""
    cfg = cfg or CaseStudyConfig.default_config()
    acc = acc or AcceleratorConfig.default_config()
    catalog = catalog or DomainCatalog.default_config()
    tiled = acc.with_tile_policy(**cfg.tile_policy) if cfg.tile_policy else acc

    layer_optimizers = {layer: OPTIMIZERS[name] for layer, name in cfg.layer_optimizers.items()}
    step = build_training(cfg.model, OPTIMIZERS[cfg.optimizer], layer_optimizers)
    report = analyze(step)
    workload = Workload(step=step, data_size=cfg.data_size, tokens_per_sample=cfg.tokens_per_sample)
    binding = step.graph.resolve_binding({"b": cfg.model.subbatch})
    footprint_gb = min_footprint(step, binding) / GB

    baseline = roofline_step_time(report.flops(binding), report.bytes(binding), acc)
    unprojected = reference_step_time(catalog.get(cfg.model.domain), acc)
    reduction = unprojected.step_seconds / baseline.step_seconds
    logger.info("Projection reduces the step from %.1f s to %.2f s", unprojected.step_seconds, baseline.step_seconds)

    results: List[StageResult] = []
    previous: Optional[PlanReport] = None
    for stage in cfg.stages:
        kind, name = stage["kind"], stage["name"]
        if kind == "roofline":
            outcome = _single_device(name, baseline.step_seconds, baseline.flops, footprint_gb, cfg, acc)
        elif kind == "cache_aware":
            timed = cache_aware_step_time(report, tiled, binding)
            outcome = _single_device(name, timed.step_seconds, timed.flops, footprint_gb, cfg, tiled)
        elif kind == "data_parallel":
            plan = ParallelPlan.from_dict({**stage["plan"], "name": name})
            outcome = evaluate_data_parallel(
                workload, tiled, plan.data_parallel, plan.subbatch, plan.overlap, name
            )
        elif kind == "layer_parallel":
            outcome = evaluate_layer_parallel(
                workload, tiled, ParallelPlan.from_dict({**stage["plan"], "name": name})
            )
        else:
            if previous is None:
                raise InvalidConfig(f"stage '{name}' needs a layer-parallel stage before it")
            layer = stage.get("embedding_layer", "embedding")
            table_gb = embedding_bytes(workload, layer) / GB
            outcome = with_sharded_embedding(
                previous, table_gb, int(stage.get("shards", 1)), name=name
            )
        logger.info("Stage %s: %.1f days per epoch", name, outcome.days_per_epoch)
        results.append(StageResult(name=name, report=outcome, paper=dict(stage.get("paper", {}))))
        previous = outcome

    return CaseStudyResult(
        stages=tuple(results),
        reduction=reduction,
        published_reduction=cfg.published_reduction,
    )


_FALLBACK_CASE_STUDY: Dict[str, Any] = {
    "name": "word-lm-projected",
    "version": "fallback",
    "model": {
        "domain": "word_lm",
        "hidden": 20992,
        "layers": 2,
        "vocab": 800000,
        "seq_len": 26,
        "subbatch": 128,
        "embedding": 5632,
        "projection": 2048,
    },
    "data_size": 77e9,
    "tokens_per_sample": 26,
    "optimizer": "sgd",
    "layer_optimizers": {"embedding": "adam", "output": "momentum"},
    "tile_policy": {"operands": 3, "concurrent_tiles": 160},
    "stages": [
        {"name": "Roofline baseline", "kind": "roofline"},
        {"name": "Cache-aware", "kind": "cache_aware"},
        {"name": "Data parallel x1024", "kind": "data_parallel", "plan": {"subbatch": 128, "data_parallel": 1024}},
        {"name": "Data parallel x512", "kind": "data_parallel", "plan": {"subbatch": 128, "data_parallel": 512}},
        {
            "name": "Layer parallel x4",
            "kind": "layer_parallel",
            "plan": {
                "subbatch": 128,
                "data_parallel": 512,
                "layer_parallel": 4,
                "assignment": [["embedding"], ["lstm0"], ["lstm1"], ["output"]],
                "pipeline_microbatches": 4,
                "rematerialize": True,
            },
        },
        {"name": "Shard embedding", "kind": "shard_embedding", "embedding_layer": "embedding", "shards": 3},
    ],
    "published_reduction": 11.7,
}
