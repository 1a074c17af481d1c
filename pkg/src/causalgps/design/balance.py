"""
Covariate balance: weighted absolute correlation between the exposure and each covariate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..errors import ConfigError, DegenerateVariance, InsufficientData, SchemaMismatch
from .pseudo_population import PseudoPopulation

logger = logging.getLogger(__name__)

ThresholdType = Literal["maximal", "mean", "median"]
THRESHOLD_TYPES: tuple[str, ...] = ("maximal", "mean", "median")


def weighted_pearson(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if not (x.shape == y.shape == w.shape):
        raise SchemaMismatch("x, y and weights must have equal lengths")
    total = float(np.sum(w))
    if not total > 0:
        raise ConfigError("weights must have a positive sum")
    dx = x - float(np.sum(w * x)) / total
    dy = y - float(np.sum(w * y)) / total
    sxx = float(np.sum(w * dx * dx))
    syy = float(np.sum(w * dy * dy))
    if not (sxx > 0 and syy > 0):
        raise DegenerateVariance("weighted variance is zero")
    r = float(np.sum(w * dx * dy)) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


@dataclass(frozen=True)
class BalanceSummary:
    mean_ac: float
    median_ac: float
    max_ac: float

    @classmethod
    def of(cls, acs: np.ndarray) -> BalanceSummary:
        acs = np.asarray(acs, dtype=np.float64)
        return cls(
            mean_ac=float(np.mean(acs)),
            median_ac=float(np.quantile(acs, 0.5)),
            max_ac=float(np.max(acs)),
        )

    def select(self, threshold_type: ThresholdType) -> float:
        if threshold_type == "maximal":
            return self.max_ac
        if threshold_type == "mean":
            return self.mean_ac
        if threshold_type == "median":
            return self.median_ac
        raise ConfigError(f"unknown threshold type {threshold_type!r}")

    def to_dict(self) -> dict[str, float]:
        return {"mean_ac": self.mean_ac, "median_ac": self.median_ac, "max_ac": self.max_ac}


@dataclass(frozen=True)
class CovariateBalance:
    names: tuple[str, ...]
    acs: np.ndarray
    summary: BalanceSummary

    def ac(self, name: str) -> float:
        return float(self.acs[self.names.index(name)])


def _covariate_ac(name: str, exposure: np.ndarray, columns: list[tuple[str, np.ndarray]], w: np.ndarray) -> float:
    best = 0.0
    for label, col in columns:
        try:
            best = max(best, abs(weighted_pearson(exposure, col, w)))
        except DegenerateVariance:
            if label == name:
                logger.warning("covariate '%s' is constant in the pseudo-population; AC set to 0", name)
    return best


def absolute_correlations(pp: PseudoPopulation) -> CovariateBalance:
    """|weighted Pearson(exposure, covariate)| per covariate over positive-weight rows.

    Categorical covariates take the maximum over their level indicators.
    """
    keep = pp.weights > 0
    if int(np.count_nonzero(keep)) < 2:
        raise InsufficientData("balance needs at least two rows with positive weight")
    w = pp.weights[keep]
    exposure = pp.data.exposure[keep]
    if not float(np.sum(w * (exposure - np.average(exposure, weights=w)) ** 2)) > 0:
        raise DegenerateVariance("exposure is constant among positively weighted rows")
    if not pp.data.covariates:
        raise InsufficientData("balance needs at least one covariate")

    names: list[str] = []
    acs: list[float] = []
    for cov in pp.data.covariates:
        if cov.kind == "categorical":
            columns = [(label, col[keep]) for label, col in cov.level_indicators(drop_reference=False)]
            ac = _covariate_ac(cov.name, exposure, columns, w)
            if ac == 0.0 and len(np.unique(cov.values[keep])) < 2:
                logger.warning("covariate '%s' is constant in the pseudo-population; AC set to 0", cov.name)
        else:
            ac = _covariate_ac(cov.name, exposure, [(cov.name, cov.values[keep])], w)
        names.append(cov.name)
        acs.append(ac)
    arr = np.asarray(acs)
    return CovariateBalance(tuple(names), arr, BalanceSummary.of(arr))


def check_balance(summary: BalanceSummary, threshold: float, threshold_type: ThresholdType) -> bool:
    """Strict: passes iff the selected adjusted summary is below ``threshold``."""
    if not threshold > 0:
        raise ConfigError(f"balance threshold must be positive, got {threshold}")
    return summary.select(threshold_type) < threshold


@dataclass(frozen=True)
class BalanceReport:
    names: tuple[str, ...]
    original_ac: np.ndarray
    adjusted_ac: np.ndarray
    original: BalanceSummary
    adjusted: BalanceSummary
    threshold: float
    threshold_type: ThresholdType
    passed: bool

    def __post_init__(self) -> None:
        if self.threshold_type not in THRESHOLD_TYPES:
            raise ConfigError(f"unknown threshold type {self.threshold_type!r}")
        if not (len(self.names) == self.original_ac.shape[0] == self.adjusted_ac.shape[0]):
            raise SchemaMismatch("balance report columns are not aligned")

    @property
    def selected(self) -> float:
        return self.adjusted.select(self.threshold_type)

    def rows(self) -> list[tuple[str, float, float]]:
        return [(n, float(o), float(a)) for n, o, a in zip(self.names, self.original_ac, self.adjusted_ac)]

    def summary_dict(self) -> dict[str, float | str | bool]:
        return {
            "original_mean_ac": self.original.mean_ac,
            "original_median_ac": self.original.median_ac,
            "original_max_ac": self.original.max_ac,
            "adjusted_mean_ac": self.adjusted.mean_ac,
            "adjusted_median_ac": self.adjusted.median_ac,
            "adjusted_max_ac": self.adjusted.max_ac,
            "threshold": self.threshold,
            "threshold_type": self.threshold_type,
            "passed": self.passed,
        }


def compare_balance(
    original: CovariateBalance,
    adjusted: CovariateBalance,
    threshold: float,
    threshold_type: ThresholdType,
) -> BalanceReport:
    if original.names != adjusted.names:
        raise SchemaMismatch("original and adjusted balance cover different covariates")
    return BalanceReport(
        names=adjusted.names,
        original_ac=original.acs,
        adjusted_ac=adjusted.acs,
        original=original.summary,
        adjusted=adjusted.summary,
        threshold=threshold,
        threshold_type=threshold_type,
        passed=check_balance(adjusted.summary, threshold, threshold_type),
    )


def uniform_baseline(pp: PseudoPopulation) -> PseudoPopulation:
    """Same rows with every weight 1, the unadjusted reference for balance."""
    return PseudoPopulation(pp.data, np.ones(pp.n_rows), "weighting", {"approach": "unadjusted"})


def balance_report(pp: PseudoPopulation, threshold: float, threshold_type: ThresholdType) -> BalanceReport:
    """Balance of ``pp`` against the same rows with uniform weights."""
    return compare_balance(absolute_correlations(uniform_baseline(pp)), absolute_correlations(pp), threshold, threshold_type)
