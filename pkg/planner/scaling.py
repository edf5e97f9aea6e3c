"""Power-law learning curves and model-size growth.

Generalization error follows ``eps(m) = alpha * m ** beta_g`` over
training-set size ``m`` and the parameters needed to fit that data grow
as ``p(m) = sigma * m ** beta_p``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from planner.exceptions import (
    InsufficientPoints,
    InvalidConfig,
    NonPositiveError,
    NonPositiveValue,
    OutsidePowerLawRegion,
    ZeroExponent,
)

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 3
# computed multipliers further than this from a published value get a note
DIVERGENCE_TOLERANCE = 0.05


@dataclass(frozen=True)
class LearningCurve:
    alpha: float
    beta_g: float
    metric_name: str = "error"
    lower_is_better: bool = True

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise InvalidConfig(f"alpha must be positive, got {self.alpha}")
        if not -0.5 <= self.beta_g <= 0:
            raise InvalidConfig(f"beta_g must lie in [-0.5, 0], got {self.beta_g}")

    def error_at(self, samples: float) -> float:
        return self.alpha * samples**self.beta_g


@dataclass(frozen=True)
class ModelSizeCurve:
    sigma: float
    beta_p: float

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise InvalidConfig(f"sigma must be positive, got {self.sigma}")
        if not 0.5 <= self.beta_p < 1:
            raise InvalidConfig(f"beta_p must lie in [0.5, 1), got {self.beta_p}")

    def params_at(self, samples: float) -> float:
        return self.sigma * samples**self.beta_p


@dataclass(frozen=True)
class DomainConstants:
    """Current and desired accuracy of one application domain."""

    domain: str
    current_sota: float
    desired_sota: float
    current_data_size: float
    learning_curve: LearningCurve
    model_size_curve: ModelSizeCurve
    data_units: str = "samples"
    current_gb: Optional[float] = None
    current_params: Optional[float] = None
    paper_data_multiplier: Optional[float] = None
    paper_model_multiplier: Optional[float] = None
    unit_notes: str = ""

    def __post_init__(self) -> None:
        if self.current_data_size <= 0:
            raise InvalidConfig(f"{self.domain}: current data size must be positive")
        better = (
            self.desired_sota <= self.current_sota
            if self.learning_curve.lower_is_better
            else self.desired_sota >= self.current_sota
        )
        if not better:
            raise InvalidConfig(
                f"{self.domain}: desired SOTA {self.desired_sota} is not better than "
                f"current {self.current_sota}"
            )


@dataclass(frozen=True)
class ProjectionReport:
    domain: str
    data_multiplier: float
    model_multiplier: float
    target_samples: float
    target_params: Optional[float]
    data_units: str
    paper_data_multiplier: Optional[float] = None
    paper_model_multiplier: Optional[float] = None
    model_multiplier_from_published_data: Optional[float] = None
    divergence_note: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "data_multiplier": self.data_multiplier,
            "model_multiplier": self.model_multiplier,
            "target_samples": self.target_samples,
            "target_params": self.target_params,
            "data_units": self.data_units,
            "paper_data_multiplier": self.paper_data_multiplier,
            "paper_model_multiplier": self.paper_model_multiplier,
            "model_multiplier_from_published_data": self.model_multiplier_from_published_data,
            "divergence_note": self.divergence_note,
        }


@dataclass(frozen=True)
class PowerLawFit:
    coefficient: float
    exponent: float
    r2: float


def required_data_multiplier(dc: DomainConstants) -> float:
    """Data growth needed to move from the current to the desired error.

    Uses the ratio of the two errors, so ``alpha`` cancels.
    """
    current, target = dc.current_sota, dc.desired_sota
    if current <= 0 or target <= 0:
        raise NonPositiveError(f"{dc.domain}: errors must be positive, got {current} and {target}")
    beta = dc.learning_curve.beta_g
    if beta == 0:
        raise ZeroExponent(f"{dc.domain}: beta_g is zero, error does not improve with data")
    ratio = current / target if dc.learning_curve.lower_is_better else target / current
    return ratio ** (1.0 / abs(beta))


def required_model_multiplier(data_mult: float, msc: ModelSizeCurve) -> float:
    return data_mult**msc.beta_p


def solve_data_for_error(lc: LearningCurve, eps: float) -> float:
    """Training-set size at which the learning curve reaches ``eps``."""
    if eps <= 0:
        raise NonPositiveError(f"target error must be positive, got {eps}")
    if eps >= lc.alpha:
        raise OutsidePowerLawRegion(
            f"target error {eps} is not below alpha {lc.alpha}; outside the power-law region"
        )
    if lc.beta_g == 0:
        raise ZeroExponent("beta_g is zero, error does not improve with data")
    return (eps / lc.alpha) ** (1.0 / lc.beta_g)


def fit_power_law(points: Sequence[Tuple[float, float]]) -> PowerLawFit:
    """Least-squares fit of ``y = coef * x ** exponent`` in log space."""
    if len(points) < MIN_FIT_POINTS:
        raise InsufficientPoints(
            f"power-law fit needs at least {MIN_FIT_POINTS} points, got {len(points)}"
        )
    data = np.asarray(points, dtype=float)
    if np.any(data <= 0):
        raise NonPositiveValue("power-law fit needs positive x and y values")
    log_x = np.log(data[:, :1])
    log_y = np.log(data[:, 1])
    model = LinearRegression().fit(log_x, log_y)
    r2 = float(r2_score(log_y, model.predict(log_x)))
    fit = PowerLawFit(
        coefficient=float(np.exp(model.intercept_)),
        exponent=float(model.coef_[0]),
        r2=r2,
    )
    logger.debug("Power-law fit over %d points: %s", len(points), fit)
    return fit


def _divergence(label: str, computed: float, published: Optional[float]) -> Optional[str]:
    if published is None or published <= 0:
        return None
    if abs(computed / published - 1.0) <= DIVERGENCE_TOLERANCE:
        return None
    return f"{label} {computed:.1f}x differs from the published {published:g}x"


def project_domain(dc: DomainConstants) -> ProjectionReport:
    """Data and model growth, and absolute sizes, needed to reach the desired error."""
    data_mult = required_data_multiplier(dc)
    model_mult = required_model_multiplier(data_mult, dc.model_size_curve)
    from_published_data = (
        required_model_multiplier(dc.paper_data_multiplier, dc.model_size_curve)
        if dc.paper_data_multiplier
        else None
    )
    notes = [
        note
        for note in (
            _divergence("data multiplier", data_mult, dc.paper_data_multiplier),
            _divergence("model multiplier", model_mult, dc.paper_model_multiplier),
        )
        if note
    ]
    note = "; ".join(notes) if notes else None
    if note:
        logger.info("%s: %s", dc.domain, note)
    target_params = dc.current_params * model_mult if dc.current_params else None
    return ProjectionReport(
        domain=dc.domain,
        data_multiplier=data_mult,
        model_multiplier=model_mult,
        target_samples=dc.current_data_size * data_mult,
        target_params=target_params,
        data_units=dc.data_units,
        paper_data_multiplier=dc.paper_data_multiplier,
        paper_model_multiplier=dc.paper_model_multiplier,
        model_multiplier_from_published_data=from_published_data,
        divergence_note=note,
    )


def sigma_params(dc: DomainConstants, samples: float) -> float:
    """Absolute parameter count from the model-size curve.

    The published sigma values carry undocumented sample units, so
    projections default to current parameters times the model multiplier.
    """
    if samples <= 0 or math.isnan(samples):
        raise NonPositiveValue(f"sample count must be positive, got {samples}")
    return dc.model_size_curve.params_at(samples)
