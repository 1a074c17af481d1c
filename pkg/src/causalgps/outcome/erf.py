"""
Exposure-response estimation on a pseudo-population.

Three outcome models share the pseudo-population weights:

- parametric: weighted linear (gaussian) or log-linear (poisson, IRLS) regression of the
  outcome on the exposure;
- semi-parametric: weighted least squares on a natural cubic regression spline basis;
- non-parametric: local-linear kernel regression with a bandwidth picked by weighted
  leave-one-out cross-validation.

Pointwise bands come from an m-out-of-n bootstrap of the non-parametric estimator.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
import scipy.linalg
from patsy import DesignMatrix, build_design_matrices, dmatrix
from scipy.stats import norm

from ..design.pseudo_population import PseudoPopulation
from ..errors import (
    AllBandwidthsDegenerate,
    ConfigError,
    DegenerateDesign,
    InputError,
    InsufficientData,
    NonConvergence,
    SchemaMismatch,
    SingularDesign,
)
from ..logging_setup import trace
from ..models.learners import fit_linear

logger = logging.getLogger(__name__)

Family = Literal["gaussian", "poisson"]
ErfMethod = Literal["pmetric", "semipmetric", "npmetric"]

GRID_TOL = 1e-12
DEGENERATE_DET = 1e-10
TIE_TOL = 1e-12
IRLS_TOL = 1e-10
IRLS_MAX_ITER = 100
# bootstrap draws allowed per requested replicate, redraws included
BOOTSTRAP_DRAW_FACTOR = 10
# evaluation points x rows per block in the local-linear sums
_LOCAL_BLOCK = 1 << 21


@dataclass(frozen=True)
class BandwidthGrid:
    start: float
    end: float
    step: float

    def __post_init__(self) -> None:
        if not (self.start > 0 and self.step > 0):
            raise ConfigError(f"bandwidth grid needs positive start and step, got {self.start}, {self.step}")
        if self.start > self.end:
            raise ConfigError(f"bandwidth grid start {self.start} exceeds end {self.end}")

    @classmethod
    def parse(cls, text: str) -> BandwidthGrid:
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"expected 'start,end,step', got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as e:
            raise ConfigError(f"expected 'start,end,step', got {text!r}") from e

    def values(self) -> np.ndarray:
        """start + k*step for k >= 0 while <= end (+1e-12)."""
        count = int(math.floor((self.end + GRID_TOL - self.start) / self.step)) + 1
        grid = self.start + self.step * np.arange(count + 1, dtype=np.float64)
        return grid[grid <= self.end + GRID_TOL]

    def as_list(self) -> list[float]:
        return [self.start, self.end, self.step]


@dataclass(frozen=True)
class ErfConfig:
    bw_grid: BandwidthGrid
    w_vals: tuple[float, ...]
    kernel: Literal["gaussian"] = "gaussian"

    def __post_init__(self) -> None:
        if self.kernel != "gaussian":
            raise ConfigError(f"only the gaussian kernel is available, got {self.kernel!r}")
        vals = tuple(float(v) for v in self.w_vals)
        if not vals:
            raise ConfigError("w_vals is empty")
        object.__setattr__(self, "w_vals", vals)


@dataclass(frozen=True)
class ErfEstimate:
    w_vals: np.ndarray
    estimates: np.ndarray
    method: ErfMethod = "npmetric"
    optimal_bw: float | None = None
    bandwidths: np.ndarray | None = None
    risks: np.ndarray | None = None
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None

    def __post_init__(self) -> None:
        k = np.asarray(self.w_vals).shape[0]
        if np.asarray(self.estimates).shape != (k,):
            raise SchemaMismatch("estimates are not aligned with w_vals")
        if (self.ci_lower is None) != (self.ci_upper is None):
            raise SchemaMismatch("ci_lower and ci_upper must both be present or both absent")
        if self.ci_lower is not None and (np.shape(self.ci_lower) != (k,) or np.shape(self.ci_upper) != (k,)):
            raise SchemaMismatch("confidence bands are not aligned with w_vals")

    @property
    def has_bands(self) -> bool:
        return self.ci_lower is not None

    def to_frame(self) -> pd.DataFrame:
        nan = np.full(self.w_vals.shape[0], np.nan)
        return pd.DataFrame(
            {
                "w": self.w_vals,
                "erf": self.estimates,
                "ci_lower": self.ci_lower if self.ci_lower is not None else nan,
                "ci_upper": self.ci_upper if self.ci_upper is not None else nan,
            }
        )

    def risks_frame(self) -> pd.DataFrame:
        if self.bandwidths is None or self.risks is None:
            return pd.DataFrame({"bandwidth": [], "cv_risk": []})
        return pd.DataFrame({"bandwidth": self.bandwidths, "cv_risk": self.risks})

    @classmethod
    def from_frame(cls, df: pd.DataFrame, method: ErfMethod = "npmetric") -> ErfEstimate:
        for col in ("w", "erf"):
            if col not in df.columns:
                raise InputError(f"ERF table is missing column '{col}'")
        lower = upper = None
        if {"ci_lower", "ci_upper"} <= set(df.columns):
            lo = pd.to_numeric(df["ci_lower"], errors="coerce").to_numpy(dtype=np.float64)
            hi = pd.to_numeric(df["ci_upper"], errors="coerce").to_numpy(dtype=np.float64)
            if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
                lower, upper = lo, hi
        return cls(
            w_vals=pd.to_numeric(df["w"], errors="coerce").to_numpy(dtype=np.float64),
            estimates=pd.to_numeric(df["erf"], errors="coerce").to_numpy(dtype=np.float64),
            method=method,
            ci_lower=lower,
            ci_upper=upper,
        )


def _outcome_rows(pp: PseudoPopulation, min_rows: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if pp.data.outcome is None:
        raise InputError("pseudo-population has no outcome column")
    keep = pp.weights > 0
    if int(np.count_nonzero(keep)) < min_rows:
        raise InsufficientData(f"need at least {min_rows} positively weighted rows, got {int(keep.sum())}")
    return pp.data.outcome[keep], pp.data.exposure[keep], pp.weights[keep]


# -- parametric --------------------------------------------------------------------------


@dataclass(frozen=True)
class PmetricFit:
    family: Family
    intercept: float
    slope: float
    iterations: int = 1

    def predict(self, w_vals: np.ndarray | Sequence[float]) -> np.ndarray:
        eta = self.intercept + self.slope * np.asarray(w_vals, dtype=np.float64)
        return eta if self.family == "gaussian" else np.exp(eta)

    def to_erf(self, w_vals: np.ndarray | Sequence[float]) -> ErfEstimate:
        w = np.asarray(w_vals, dtype=np.float64)
        return ErfEstimate(w_vals=w, estimates=self.predict(w), method="pmetric")

    def to_dict(self) -> dict[str, float | int | str]:
        return {"family": self.family, "intercept": self.intercept, "slope": self.slope, "iterations": self.iterations}


def _poisson_irls(y: np.ndarray, e: np.ndarray, w: np.ndarray) -> PmetricFit:
    X = np.column_stack([np.ones_like(e), e])
    mean_y = float(np.sum(w * y) / np.sum(w))
    if not mean_y > 0:
        raise DegenerateDesign("poisson outcome is zero for every weighted row")
    beta = np.array([math.log(mean_y), 0.0])
    for it in range(1, IRLS_MAX_ITER + 1):
        eta = X @ beta
        mu = np.exp(eta)
        z = eta + (y - mu) / mu
        W = w * mu
        gram = X.T @ (X * W[:, None])
        try:
            new = scipy.linalg.solve(gram, X.T @ (W * z), assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
            raise SingularDesign(f"poisson IRLS design is singular: {err}") from err
        if not np.all(np.isfinite(new)):
            raise NonConvergence(f"poisson IRLS diverged at iteration {it}")
        step = float(np.max(np.abs(new - beta)))
        beta = new
        trace(logger, "poisson IRLS iteration %d: beta=%s step=%.3g", it, beta.tolist(), step)
        if step < IRLS_TOL:
            return PmetricFit("poisson", float(beta[0]), float(beta[1]), it)
    raise NonConvergence(f"poisson IRLS did not converge in {IRLS_MAX_ITER} iterations")


def estimate_pmetric_erf(pp: PseudoPopulation, family: Family = "gaussian") -> PmetricFit:
    y, e, w = _outcome_rows(pp, 3)
    if family == "gaussian":
        model = fit_linear(e, y, w)
        fit = PmetricFit("gaussian", model.intercept, float(model.coef[0]))
    elif family == "poisson":
        if np.any(y < 0):
            raise InputError("poisson family requires a non-negative outcome")
        if not float(np.ptp(e)) > 0:
            raise SingularDesign("exposure is constant among weighted rows")
        fit = _poisson_irls(y, e, w)
    else:
        raise ConfigError(f"unknown family {family!r}")
    logger.debug("parametric %s fit: intercept=%.6g slope=%.6g", family, fit.intercept, fit.slope)
    return fit


# -- semi-parametric ---------------------------------------------------------------------


def natural_spline_knots(exposure: np.ndarray, spline_df: int) -> np.ndarray:
    """Boundary knots at the extremes, interior knots at quantiles j/df, j = 1..df-1."""
    probs = np.arange(spline_df + 1, dtype=np.float64) / spline_df
    knots = np.quantile(exposure, probs)
    knots[0], knots[-1] = float(np.min(exposure)), float(np.max(exposure))
    if np.any(np.diff(knots) <= 0):
        raise DegenerateDesign(f"spline knots are not distinct for df={spline_df}: {knots.tolist()}")
    return knots


def natural_spline_design(exposure: np.ndarray, spline_df: int) -> DesignMatrix:
    """Natural cubic regression spline basis with df + 1 knots, spanning the intercept.

    Knots sit where ``natural_spline_knots`` puts them. Evaluate the same basis elsewhere
    with ``spline_basis_at``.
    """
    return dmatrix(f"cr(w, df={spline_df + 1}) - 1", {"w": np.asarray(exposure, dtype=np.float64)})


def spline_basis_at(design: DesignMatrix, w_vals: np.ndarray) -> np.ndarray:
    (basis,) = build_design_matrices([design.design_info], {"w": np.asarray(w_vals, dtype=np.float64)})
    return np.asarray(basis)


def estimate_semipmetric_erf(
    pp: PseudoPopulation,
    spline_df: int,
    w_vals: np.ndarray | Sequence[float],
) -> ErfEstimate:
    if spline_df < 3:
        raise ConfigError(f"spline_df must be >= 3, got {spline_df}")
    y, e, w = _outcome_rows(pp, spline_df + 2)
    if not float(np.ptp(e)) > 0:
        raise DegenerateDesign("exposure is constant among weighted rows")

    knots = natural_spline_knots(e, spline_df)
    design = natural_spline_design(e, spline_df)
    X = np.asarray(design)
    root_w = np.sqrt(w)
    coef, _, rank, _ = scipy.linalg.lstsq(X * root_w[:, None], y * root_w)
    if rank < X.shape[1]:
        raise DegenerateDesign(f"spline design has rank {rank} < {X.shape[1]}")
    wv = np.asarray(w_vals, dtype=np.float64)
    fitted = spline_basis_at(design, wv) @ coef
    logger.debug("semi-parametric fit: df=%d knots=%s", spline_df, np.round(knots, 6).tolist())
    return ErfEstimate(w_vals=wv, estimates=fitted, method="semipmetric")


# -- non-parametric ----------------------------------------------------------------------


def _local_sums(
    points: np.ndarray, e: np.ndarray, y: np.ndarray, w: np.ndarray, h: float
) -> tuple[np.ndarray, ...]:
    """Kernel-weighted moments S0, S1, S2, T0, T1 of (1, e - t) at every point t."""
    rows = max(1, _LOCAL_BLOCK // e.shape[0])
    out = [np.empty(points.shape[0]) for _ in range(5)]
    for start in range(0, points.shape[0], rows):
        t = points[start:start + rows, None]
        d = e[None, :] - t
        k = w[None, :] * norm.pdf(d / h)
        kd = k * d
        sl = slice(start, start + rows)
        out[0][sl] = k.sum(axis=1)
        out[1][sl] = kd.sum(axis=1)
        out[2][sl] = (kd * d).sum(axis=1)
        out[3][sl] = (k * y[None, :]).sum(axis=1)
        out[4][sl] = (kd * y[None, :]).sum(axis=1)
    return tuple(out)


def _local_linear(s0: np.ndarray, s1: np.ndarray, s2: np.ndarray, t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    """Intercept of the local fit; NaN where the local design is degenerate."""
    det = s0 * s2 - s1 * s1
    ok = (s0 > 0) & (det > DEGENERATE_DET * s0 * s2)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = (s2 * t0 - s1 * t1) / det
    return np.where(ok, mu, np.nan)


def local_linear_fit(
    outcome: np.ndarray, exposure: np.ndarray, weights: np.ndarray, h: float, w_vals: np.ndarray
) -> np.ndarray:
    return _local_linear(*_local_sums(np.asarray(w_vals, dtype=np.float64), exposure, outcome, weights, h))


def loo_cv_risk(outcome: np.ndarray, exposure: np.ndarray, weights: np.ndarray, h: float) -> float:
    """Weighted leave-one-out risk; NaN if any held-out local fit is degenerate."""
    s0, s1, s2, t0, t1 = _local_sums(exposure, exposure, outcome, weights, h)
    # held-out point sits at d = 0, so it only enters S0 and T0
    self_k = weights * norm.pdf(0.0)
    mu = _local_linear(s0 - self_k, s1, s2, t0 - self_k * outcome, t1)
    if np.any(np.isnan(mu)):
        return math.nan
    return float(np.sum(weights * (outcome - mu) ** 2) / np.sum(weights))


def select_bandwidth(bandwidths: np.ndarray, risks: np.ndarray) -> float:
    """Smallest h whose risk is within 1e-12 (relative) of the minimum."""
    finite = np.isfinite(risks)
    if not finite.any():
        raise AllBandwidthsDegenerate("every candidate bandwidth gives a degenerate local fit")
    best = float(np.min(risks[finite]))
    tol = TIE_TOL * max(1.0, best)
    return float(np.min(bandwidths[finite & (risks <= best + tol)]))


def estimate_npmetric_erf(
    outcome: np.ndarray,
    exposure: np.ndarray,
    weights: np.ndarray,
    bw_grid: BandwidthGrid,
    w_vals: np.ndarray | Sequence[float],
    kernel: Literal["gaussian"] = "gaussian",
    nthread: int = 1,
) -> ErfEstimate:
    if kernel != "gaussian":
        raise ConfigError(f"only the gaussian kernel is available, got {kernel!r}")
    y = np.asarray(outcome, dtype=np.float64)
    e = np.asarray(exposure, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if not (y.shape == e.shape == w.shape):
        raise SchemaMismatch("outcome, exposure and weights must be aligned")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InputError("weights must be finite and non-negative")
    keep = w > 0
    y, e, w = y[keep], e[keep], w[keep]
    if np.unique(e).size < 2:
        raise InsufficientData("local-linear fit needs at least two distinct positively weighted exposures")

    started = time.perf_counter()
    bandwidths = bw_grid.values()

    def _risk(h: float) -> float:
        return loo_cv_risk(y, e, w, float(h))

    if nthread > 1 and bandwidths.size > 1:
        with ThreadPoolExecutor(max_workers=nthread) as ex:
            risks = np.asarray(list(ex.map(_risk, bandwidths)))
    else:
        risks = np.asarray([_risk(h) for h in bandwidths])
    for h, r in zip(bandwidths, risks):
        trace(logger, "bandwidth %.6g: cv risk %.6g", h, r)

    h_opt = select_bandwidth(bandwidths, risks)
    wv = np.asarray(w_vals, dtype=np.float64)
    estimates = local_linear_fit(y, e, w, h_opt, wv)
    if np.any(np.isnan(estimates)):
        logger.warning(
            "local fit is degenerate at %d of %d evaluation points; estimates left empty",
            int(np.isnan(estimates).sum()),
            wv.size,
        )
    logger.debug("selected bandwidth %.6g in %.2fs", h_opt, time.perf_counter() - started)
    return ErfEstimate(
        w_vals=wv,
        estimates=estimates,
        method="npmetric",
        optimal_bw=h_opt,
        bandwidths=bandwidths,
        risks=risks,
    )


def bootstrap_erf_ci(
    pp: PseudoPopulation,
    m: int,
    B: int,
    erf_config: ErfConfig,
    rng_seed: int,
    alpha: float = 0.05,
    nthread: int = 1,
) -> ErfEstimate:
    """m-out-of-n bootstrap bands for the local-linear ERF.

    Replicate b draws m of the n positively weighted rows with replacement from
    ``default_rng(rng_seed + b)``, keeping their weights. A draw whose local fit is
    degenerate is skipped and replaced by the next seed after B; the run fails only when
    fewer than two replicates can be fitted. Bands are
    mu(w) +/- z_{1-alpha/2} * sqrt(m/n) * sd_b(mu_b(w)).
    """
    y, e, w = _outcome_rows(pp, 2)
    n = y.shape[0]
    if not 1 <= m <= n:
        raise ConfigError(f"m must lie in [1, {n}], got {m}")
    if B < 2:
        raise ConfigError(f"B must be >= 2, got {B}")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")

    point = estimate_npmetric_erf(y, e, w, erf_config.bw_grid, erf_config.w_vals, erf_config.kernel)

    def _replicate(b: int) -> np.ndarray | None:
        rng = np.random.default_rng(rng_seed + b)
        idx = rng.integers(0, n, size=m)
        try:
            rep = estimate_npmetric_erf(
                y[idx], e[idx], w[idx], erf_config.bw_grid, erf_config.w_vals, erf_config.kernel
            )
        except (AllBandwidthsDegenerate, InsufficientData) as err:
            logger.debug("bootstrap draw %d skipped: %s", b, err)
            return None
        return rep.estimates

    started = time.perf_counter()
    reps: list[np.ndarray] = []
    next_b, max_b = 1, BOOTSTRAP_DRAW_FACTOR * B
    with ThreadPoolExecutor(max_workers=nthread) as ex:
        # each round redraws the missing replicates from fresh seeds, in seed order
        while len(reps) < B and next_b <= max_b:
            seeds = range(next_b, min(next_b + B - len(reps), max_b + 1))
            reps.extend(r for r in ex.map(_replicate, seeds) if r is not None)
            next_b = seeds.stop
    if len(reps) < 2:
        raise InsufficientData(
            f"only {len(reps)} of {next_b - 1} bootstrap draws of m={m} rows gave a local-linear fit"
        )
    skipped = next_b - 1 - len(reps)
    if skipped:
        logger.warning(
            "bootstrap skipped %d degenerate draws of m=%d rows; kept %d of %d replicates", skipped, m, len(reps), B
        )
    spread = np.std(np.vstack(reps), axis=0, ddof=1) * math.sqrt(m / n)
    z = float(norm.ppf(1.0 - alpha / 2.0))
    logger.debug(
        "bootstrap: B=%d m=%d n=%d skipped=%d in %.2fs", len(reps), m, n, skipped, time.perf_counter() - started
    )
    return ErfEstimate(
        w_vals=point.w_vals,
        estimates=point.estimates,
        method="npmetric",
        optimal_bw=point.optimal_bw,
        bandwidths=point.bandwidths,
        risks=point.risks,
        ci_lower=point.estimates - z * spread,
        ci_upper=point.estimates + z * spread,
    )
