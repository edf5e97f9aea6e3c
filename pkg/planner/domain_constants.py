from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from config.asset_env import get_asset_path
from planner.exceptions import InvalidConfig
from planner.model_config import DOMAINS
from planner.scaling import DomainConstants, LearningCurve, ModelSizeCurve

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class RequirementRates:
    """Per-parameter training-step requirements of one domain.

    FLOPs per step are ``flops_per_param * b * p``, bytes accessed are
    ``bytes_lambda * p + bytes_mu * b * sqrt(p)`` and the footprint is
    ``footprint_per_param * p``.
    """

    flops_per_param: float
    bytes_lambda: float
    bytes_mu: float
    footprint_per_param: float
    intensity: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.flops_per_param <= 0 or self.footprint_per_param <= 0:
            raise InvalidConfig("requirement rates must be positive")
        if self.bytes_lambda < 0 or self.bytes_mu < 0:
            raise InvalidConfig("byte rates must be non-negative")

    def step_flops(self, params: float, subbatch: float) -> float:
        return self.flops_per_param * subbatch * params

    def step_bytes(self, params: float, subbatch: float) -> float:
        return self.bytes_lambda * params + self.bytes_mu * subbatch * math.sqrt(params)

    def footprint_bytes(self, params: float) -> float:
        return self.footprint_per_param * params

    def implied_intensity(self) -> Tuple[float, float]:
        """Denominator coefficients of ``b*sqrt(p) / (x*sqrt(p) + y*b)``."""
        return (
            self.bytes_lambda / self.flops_per_param,
            self.bytes_mu / self.flops_per_param,
        )


@dataclass(frozen=True)
class ReferenceRow:
    data_size: float
    params: float
    subbatch: int
    tflops_per_step: float
    tb_per_step: float
    footprint_gb: float
    step_seconds: float
    epoch_days: float


@dataclass(frozen=True)
class DomainRecord:
    domain: str
    label: str
    constants: DomainConstants
    rates: RequirementRates
    reference: ReferenceRow
    tokens_per_sample: float
    model: Dict[str, Any] = field(default_factory=dict)

    def samples_per_epoch(self, data_size: Optional[float] = None) -> float:
        size = self.reference.data_size if data_size is None else data_size
        return size / self.tokens_per_sample


@dataclass(frozen=True)
class DomainCatalog:
    version: str
    records: Dict[str, DomainRecord]

    def get(self, domain: str) -> DomainRecord:
        if domain not in self.records:
            raise InvalidConfig(
                f"Unknown domain '{domain}', expected one of {sorted(self.records)}"
            )
        return self.records[domain]

    @property
    def domains(self) -> Tuple[str, ...]:
        return tuple(d for d in DOMAINS if d in self.records)

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> DomainCatalog:
        records: Dict[str, DomainRecord] = {}
        for domain, raw in data["domains"].items():
            records[domain] = _record(domain, raw)
        return DomainCatalog(version=str(data.get("version", "unversioned")), records=records)

    @staticmethod
    def fallback() -> DomainCatalog:
        return DomainCatalog.from_dict(_FALLBACK_CATALOG)

    @staticmethod
    def default_config(path: Optional[str] = None) -> DomainCatalog:
        """Load the per-domain constants, falling back to built-in values."""
        config_path = path or get_asset_path("domain_constants.json")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config_data: Dict[str, Any] = json.load(f)
            return DomainCatalog.from_dict(config_data)
        except (FileNotFoundError, KeyError, TypeError, json.JSONDecodeError) as e:
            if path is not None:
                raise InvalidConfig(f"Could not load domain constants from {config_path}: {e}") from e
            logger.warning(
                "Could not load domain constants from %s: %s. Using fallback default values",
                config_path,
                e,
            )
            return DomainCatalog.fallback()


def _record(domain: str, raw: Dict[str, Any]) -> DomainRecord:
    published = raw.get("published_projection", {})
    curve = raw["learning_curve"]
    size_curve = raw["model_size_curve"]
    constants = DomainConstants(
        domain=domain,
        current_sota=float(raw["current_sota"]),
        desired_sota=float(raw["desired_sota"]),
        current_data_size=float(raw["current_data_size"]),
        learning_curve=LearningCurve(
            alpha=float(curve["alpha"]),
            beta_g=float(curve["beta_g"]),
            metric_name=raw.get("metric", "error"),
            lower_is_better=bool(raw.get("lower_is_better", True)),
        ),
        model_size_curve=ModelSizeCurve(
            sigma=float(size_curve["sigma"]), beta_p=float(size_curve["beta_p"])
        ),
        data_units=raw.get("data_units", "samples"),
        current_gb=raw.get("current_gb"),
        current_params=raw.get("current_params"),
        paper_data_multiplier=published.get("data_multiplier"),
        paper_model_multiplier=published.get("model_multiplier"),
        unit_notes=raw.get("unit_notes", ""),
    )
    rates = raw["rates"]
    return DomainRecord(
        domain=domain,
        label=raw.get("label", domain),
        constants=constants,
        rates=RequirementRates(
            flops_per_param=float(rates["flops_per_param"]),
            bytes_lambda=float(rates["bytes_lambda"]),
            bytes_mu=float(rates["bytes_mu"]),
            footprint_per_param=float(rates["footprint_per_param"]),
            intensity=tuple(rates.get("intensity", (0.0, 0.0))),
        ),
        reference=ReferenceRow(**raw["reference"]),
        tokens_per_sample=float(raw["tokens_per_sample"]),
        model=dict(raw.get("model", {})),
    )


def _fallback_domain(
    label: str,
    sota: Tuple[float, float],
    data: Tuple[float, str, float],
    params: float,
    curves: Tuple[float, float, float, float],
    published: Tuple[float, float],
    rates: Tuple[float, float, float, float],
    reference: Tuple[float, float, int, float, float, float, float, float],
    tokens_per_sample: float,
) -> Dict[str, Any]:
    alpha, beta_g, sigma, beta_p = curves
    keys = ("data_size", "params", "subbatch", "tflops_per_step", "tb_per_step",
            "footprint_gb", "step_seconds", "epoch_days")
    return {
        "label": label,
        "current_sota": sota[0],
        "desired_sota": sota[1],
        "current_data_size": data[0],
        "data_units": data[1],
        "current_gb": data[2],
        "current_params": params,
        "learning_curve": {"alpha": alpha, "beta_g": beta_g},
        "model_size_curve": {"sigma": sigma, "beta_p": beta_p},
        "published_projection": {"data_multiplier": published[0], "model_multiplier": published[1]},
        "rates": dict(zip(("flops_per_param", "bytes_lambda", "bytes_mu", "footprint_per_param"), rates)),
        "reference": dict(zip(keys, reference)),
        "tokens_per_sample": tokens_per_sample,
    }


_FALLBACK_CATALOG: Dict[str, Any] = {
    "version": "fallback",
    "domains": {
        "word_lm": _fallback_domain(
            "Word LMs (LSTM)", (3.37, 2.48), (768e6, "words", 3.9), 1.04e9,
            (13.0, -0.066, 9.4e-4, 0.68), (100, 23), (481, 1755, 30784, 11.94),
            (77e9, 23.8e9, 128, 1444, 41.5, 272, 115, 31000), 26,
        ),
        "char_lm": _fallback_domain(
            "Character LMs (RHN)", (1.30, 0.70), (3.48e9, "chars", 3.9), 3.2e8,
            (9.39, -0.092, 1.2e-5, 0.89), (971, 456), (900, 3510, 102980, 12.47),
            (3.4e12, 146e9, 96, 12618, 488.1, 1703, 1007, 3.5e6), 118,
        ),
        "nmt": _fallback_domain(
            "NMT (enc/dec+attn)", (0.28, 0.12), (130e6, "word pieces", 2.6), 2.1e8,
            (3.06, -0.128, 6.4e-4, 0.68), (750, 90), (149, 533, 22653, 10.32),
            (97.4e9, 18.9e9, 96, 499, 18.4, 185, 39.8, 16000), 29,
        ),
        "speech": _fallback_domain(
            "Speech Recogn. (enc/dec+attn)", (0.095, 0.04), (425e6, "chars", 1674), 1.1e8,
            (30.5, -0.291, 2.4e-3, 0.54), (33, 6.6), (775, 3100, 162750, 32.94),
            (14e9, 727e6, 128, 72, 2.8, 30, 5.8, 93), 79,
        ),
        "image": _fallback_domain(
            "Image Classification (ResNet)", (0.194, 0.05), (1.3e6, "images", 152), 6.0e7,
            (15.0, -0.309, 2.0e-2, 0.57), (81, 12), (1111, 66.7, 268862, 42.57),
            (103e6, 732e6, 32, 28, 0.4, 34, 2.3, 84), 1,
        ),
    },
}
