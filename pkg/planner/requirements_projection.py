"""Training-step requirements at projected model and data sizes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import pandas as pd

from planner.accelerator_config import AcceleratorConfig
from planner.domain_constants import SECONDS_PER_DAY, DomainCatalog, DomainRecord
from planner.perf_model import StepTimeReport, roofline_step_time
from planner.scaling import project_domain

logger = logging.getLogger(__name__)

PROJECTION_COLUMNS = [
    "domain",
    "data_size",
    "params",
    "subbatch",
    "tflops_per_step",
    "tb_per_step",
    "footprint_gb",
    "step_seconds",
    "epoch_days",
    "reference_step_seconds",
    "reference_epoch_days",
    "paper_step_seconds",
    "paper_epoch_days",
]


@dataclass(frozen=True)
class RequirementProjection:
    domain: str
    data_size: float
    params: float
    subbatch: int
    flops_per_step: float
    bytes_per_step: float
    footprint_bytes: float
    step: StepTimeReport
    epoch_days: float

    @property
    def intensity(self) -> float:
        return self.flops_per_step / self.bytes_per_step


def epoch_days(
    data_size: float,
    tokens_per_sample: float,
    global_batch: float,
    step_seconds: float,
) -> float:
    """Days to stream the dataset once at ``global_batch`` samples per step."""
    steps = data_size / (tokens_per_sample * global_batch)
    return steps * step_seconds / SECONDS_PER_DAY


def project_requirements(
    record: DomainRecord,
    acc: AcceleratorConfig,
    params: Optional[float] = None,
    subbatch: Optional[int] = None,
    data_size: Optional[float] = None,
) -> RequirementProjection:
    """Per-step FLOPs, bytes and footprint from the per-parameter rates."""
    reference = record.reference
    params = reference.params if params is None else params
    subbatch = reference.subbatch if subbatch is None else subbatch
    data_size = reference.data_size if data_size is None else data_size
    rates = record.rates
    flops = rates.step_flops(params, subbatch)
    accessed = rates.step_bytes(params, subbatch)
    step = roofline_step_time(flops, accessed, acc)
    return RequirementProjection(
        domain=record.domain,
        data_size=data_size,
        params=params,
        subbatch=subbatch,
        flops_per_step=flops,
        bytes_per_step=accessed,
        footprint_bytes=rates.footprint_bytes(params),
        step=step,
        epoch_days=epoch_days(data_size, record.tokens_per_sample, subbatch, step.step_seconds),
    )


def reference_step_time(record: DomainRecord, acc: AcceleratorConfig) -> StepTimeReport:
    """Roofline time of the published per-step FLOPs and bytes."""
    reference = record.reference
    return roofline_step_time(reference.tflops_per_step * 1e12, reference.tb_per_step * 1e12, acc)


def reference_epoch_days(record: DomainRecord, acc: AcceleratorConfig) -> float:
    step = reference_step_time(record, acc)
    return epoch_days(
        record.reference.data_size,
        record.tokens_per_sample,
        record.reference.subbatch,
        step.step_seconds,
    )


def projection_table(
    catalog: DomainCatalog,
    acc: AcceleratorConfig,
    domains: Optional[list[str]] = None,
) -> pd.DataFrame:
    """Rate-model requirements next to the reference rows, one row per domain."""
    rows = []
    for domain in domains or list(catalog.domains):
        record = catalog.get(domain)
        projection = project_domain(record.constants)
        params = projection.target_params or record.reference.params
        computed = project_requirements(
            record, acc, params=params, data_size=projection.target_samples
        )
        reference = reference_step_time(record, acc)
        rows.append(
            {
                "domain": domain,
                "data_size": computed.data_size,
                "params": computed.params,
                "subbatch": computed.subbatch,
                "tflops_per_step": computed.flops_per_step / 1e12,
                "tb_per_step": computed.bytes_per_step / 1e12,
                "footprint_gb": computed.footprint_bytes / 1e9,
                "step_seconds": computed.step.step_seconds,
                "epoch_days": computed.epoch_days,
                "reference_step_seconds": reference.step_seconds,
                "reference_epoch_days": reference_epoch_days(record, acc),
                "paper_step_seconds": record.reference.step_seconds,
                "paper_epoch_days": record.reference.epoch_days,
            }
        )
        logger.debug("Projected %s: %.1f s per step", domain, computed.step.step_seconds)
    return pd.DataFrame(rows, columns=PROJECTION_COLUMNS)


def rate_consistency(record: DomainRecord) -> Dict[str, float]:
    """Relative error of the published intensity coefficients against bytes / FLOPs."""
    implied = record.rates.implied_intensity()
    published = record.rates.intensity
    return {
        "lambda": abs(implied[0] / published[0] - 1.0),
        "mu": abs(implied[1] / published[1] - 1.0),
    }
