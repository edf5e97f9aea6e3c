"""Requirement sweeps over one model dimension and their asymptotic fits.

FLOPs per sample grow as ``gamma * p``, bytes per step as
``lambda * p + mu * b * sqrt(p)`` and the footprint as ``delta * p``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from planner.analyzers import CostReport, analyze
from planner.autodiff import SGD, OptimizerSpec, derive_training_graph
from planner.exceptions import InsufficientPoints, InvalidConfig, NonPositiveValue
from planner.footprint import min_footprint
from planner.model_config import ModelConfig
from planner.modelzoo import build
from planner.symexpr import DimExpr

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["p", "flops_per_sample", "bytes_per_step", "intensity", "footprint_bytes"]
MIN_SWEEP_POINTS = 5
MIN_DECADES = 2.0
SUBBATCH_SYMBOL = "b"


@dataclass(frozen=True)
class RequirementFit:
    gamma: float
    lam: float
    mu: float
    delta: float
    r2: Dict[str, float]
    max_residual: Dict[str, float]


def _report(cfg: ModelConfig, training: bool, optimizer: OptimizerSpec) -> CostReport:
    graph = build(cfg)
    return analyze(derive_training_graph(graph, optimizer) if training else graph)


def _row(report: CostReport, binding: Dict[str, Any]) -> Dict[str, float]:
    resolved = report.graph.resolve_binding(binding)
    subbatch = float(resolved.get(SUBBATCH_SYMBOL, 1))
    flops = report.flops(resolved)
    return {
        "p": report.parameter_count.evaluate(resolved),
        "flops_per_sample": flops / subbatch,
        "bytes_per_step": report.bytes(resolved),
        "intensity": report.op_intensity(resolved),
    }


def _footprint(report: CostReport, binding: Dict[str, Any]) -> float:
    return min_footprint(report.graph, report.graph.resolve_binding(binding))


def sweep(
    cfg: ModelConfig,
    axis: str,
    values: Sequence[Union[int, float]],
    fixed: Optional[Mapping[str, Any]] = None,
    optimizer: OptimizerSpec = SGD,
    training: bool = True,
    footprint: bool = True,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """One row of evaluated requirements per axis value.

    ``axis`` is either a graph symbol (rebound on one analysed graph) or a
    structural ModelConfig field (the model is rebuilt per value).
    """
    fixed = dict(fixed or {})
    base = _report(cfg, training, optimizer)
    structural = {f.name for f in fields(ModelConfig)} - {"domain"}
    if axis in base.graph.declared_symbols():
        points = [(base, {**fixed, axis: value}) for value in values]
    elif axis in structural:
        points = [
            (_report(cfg.with_overrides(**{axis: value}), training, optimizer), fixed)
            for value in values
        ]
    else:
        raise InvalidConfig(
            f"'{axis}' is neither a symbol of {base.graph.name} "
            f"{base.graph.declared_symbols()} nor a model option"
        )

    rows = [_row(report, binding) for report, binding in points]
    if footprint:
        sizes = Parallel(n_jobs=n_jobs)(
            delayed(_footprint)(report, binding) for report, binding in points
        )
    else:
        sizes = [float("nan")] * len(points)
    for row, size in zip(rows, sizes):
        row["footprint_bytes"] = size
    table = pd.DataFrame(rows, columns=SWEEP_COLUMNS, index=pd.Index(list(values), name=axis))
    logger.info("Swept %s over %d values of %s", cfg.domain, len(table), axis)
    return table


def _leading_term(expr: DimExpr, axis: str) -> Tuple[int, Fraction]:
    degree = expr.degree_in(axis)
    coefficient = sum(
        (coef for mono, coef in expr.terms if dict(mono).get(axis, 0) == degree), Fraction(0)
    )
    return degree, coefficient


def asymptotic_intensity(
    report: CostReport,
    axis: str,
    binding: Optional[Mapping[str, Any]] = None,
) -> float:
    """Limit of the operational intensity as ``axis`` grows, other symbols bound.

    The ratio of the leading FLOP and byte coefficients in ``axis``;
    infinite when FLOPs grow faster than bytes.
    """
    fixed = {k: v for k, v in report.graph.resolve_binding(binding).items() if k != axis}
    flops_degree, flops_coef = _leading_term(report.total_flops.substitute(fixed), axis)
    bytes_degree, bytes_coef = _leading_term(report.total_bytes.substitute(fixed), axis)
    if bytes_coef <= 0:
        raise NonPositiveValue(f"Graph '{report.graph_name}' accesses no bytes growing in {axis}")
    if flops_degree > bytes_degree:
        return float("inf")
    if flops_degree < bytes_degree:
        return 0.0
    return float(flops_coef / bytes_coef)


def _relative_residual(y: np.ndarray, predicted: np.ndarray) -> float:
    return float(np.max(np.abs(predicted - y) / np.abs(y)))


def fit_requirement_models(
    table: pd.DataFrame,
    subbatch: float,
    min_params: float = 0.0,
) -> RequirementFit:
    """Least-squares coefficients of the three asymptotic requirement forms."""
    tail = table[table["p"] > min_params]
    if len(tail) < MIN_SWEEP_POINTS:
        raise InsufficientPoints(
            f"requirement fits need at least {MIN_SWEEP_POINTS} points, got {len(tail)}"
        )
    p = tail["p"].to_numpy(dtype=float)
    decades = float(np.log10(p.max() / p.min()))
    if decades < MIN_DECADES:
        raise InsufficientPoints(
            f"sweep spans {decades:.2f} decades of parameters, need {MIN_DECADES:g}"
        )

    r2: Dict[str, float] = {}
    residual: Dict[str, float] = {}

    def fit(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        model = LinearRegression(fit_intercept=False).fit(x, y)
        predicted = model.predict(x)
        r2[name] = float(r2_score(y, predicted))
        residual[name] = _relative_residual(y, predicted)
        return model.coef_

    (gamma,) = fit("flops", p.reshape(-1, 1), tail["flops_per_sample"].to_numpy(dtype=float))
    lam, mu = fit(
        "bytes",
        np.column_stack([p, subbatch * np.sqrt(p)]),
        tail["bytes_per_step"].to_numpy(dtype=float),
    )
    if tail["footprint_bytes"].notna().all():
        (delta,) = fit("footprint", p.reshape(-1, 1), tail["footprint_bytes"].to_numpy(dtype=float))
    else:
        delta = float("nan")
    result = RequirementFit(
        gamma=float(gamma),
        lam=float(lam),
        mu=float(mu),
        delta=float(delta),
        r2=r2,
        max_residual=residual,
    )
    logger.debug("Requirement fit: %s", result)
    return result
