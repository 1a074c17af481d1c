"""
Generalized propensity score estimation.

The GPS is the conditional density of the exposure given covariates. Two specifications
are supported:

- ``normal``: E | X ~ N(E_hat(X), sigma^2) with a single residual scale.
- ``kernel``: residuals are standardized by a fitted conditional variance and their
  density is estimated with a Gaussian kernel smoother.

Both kinds also carry a marginal exposure density, used for stabilized weights.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from scipy.stats import norm

from ..data.dataset import ColumnTransform, Dataset
from ..errors import (
    ConfigError,
    DegenerateExposure,
    DegenerateSample,
    DegenerateVariance,
    InsufficientData,
    SchemaMismatch,
)
from .learners import LearnerSpec, RegressionModel, fit_learner

logger = logging.getLogger(__name__)

DensityKind = Literal["normal", "kernel"]

DENSITY_FLOOR = 1e-300
VARIANCE_FLOOR = 1e-8
MIN_ROWS = 10
# eval points x samples evaluated per block by the kernel smoother
_KDE_BLOCK = 1 << 21


def kernel_density(
    samples: np.ndarray | Sequence[float],
    bandwidth: float,
    eval_points: np.ndarray | Sequence[float],
    nthread: int = 1,
) -> np.ndarray:
    """Gaussian KDE: f(t) = 1/(n h) * sum_i phi((t - s_i) / h)."""
    s = np.asarray(samples, dtype=np.float64)
    t = np.asarray(eval_points, dtype=np.float64)
    if s.size == 0:
        raise DegenerateSample("kernel density needs at least one sample")
    if not bandwidth > 0:
        raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
    scale = 1.0 / (s.size * bandwidth)
    rows = max(1, _KDE_BLOCK // s.size)
    starts = list(range(0, t.size, rows))

    def _block(start: int) -> np.ndarray:
        z = (t[start:start + rows, None] - s[None, :]) / bandwidth
        return norm.pdf(z).sum(axis=1) * scale

    if nthread > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=nthread) as ex:
            parts = list(ex.map(_block, starts))
    else:
        parts = [_block(start) for start in starts]
    return np.concatenate(parts) if parts else np.empty(0)


def silverman_bandwidth(samples: np.ndarray | Sequence[float]) -> float:
    """h = 0.9 * min(sd, IQR / 1.34) * n^(-1/5); sd alone when the IQR is zero."""
    s = np.asarray(samples, dtype=np.float64)
    if s.size < 2:
        raise DegenerateSample("bandwidth selection needs at least two samples")
    sd = float(np.std(s, ddof=1))
    if not sd > 0:
        raise DegenerateSample("bandwidth selection needs non-constant samples")
    iqr = float(np.quantile(s, 0.75) - np.quantile(s, 0.25))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * s.size ** (-0.2)


@dataclass(frozen=True)
class MarginalDensity:
    """Fitted f_E: normal plug-in (mean, sd with denominator N) or a KDE of the exposure."""

    kind: DensityKind
    mean: float = 0.0
    sd: float = 1.0
    samples: np.ndarray | None = None
    bandwidth: float | None = None

    @classmethod
    def fit(cls, exposure: np.ndarray, kind: DensityKind) -> MarginalDensity:
        e = np.asarray(exposure, dtype=np.float64)
        if e.size < 2 or not float(np.var(e)) > 0:
            raise DegenerateExposure("marginal density needs at least two distinct exposures")
        if kind == "normal":
            return cls(kind=kind, mean=float(np.mean(e)), sd=float(np.std(e)))
        if kind == "kernel":
            return cls(kind=kind, samples=e.copy(), bandwidth=silverman_bandwidth(e))
        raise ConfigError(f"unknown density kind {kind!r}")

    def evaluate(self, e: np.ndarray, nthread: int = 1) -> np.ndarray:
        e = np.asarray(e, dtype=np.float64)
        if self.kind == "normal":
            f = norm.pdf((e - self.mean) / self.sd) / self.sd
        else:
            assert self.samples is not None and self.bandwidth is not None
            f = kernel_density(self.samples, self.bandwidth, e, nthread)
        return np.maximum(f, DENSITY_FLOOR)


def marginal_density(exposure: np.ndarray, density_kind: DensityKind) -> np.ndarray:
    return MarginalDensity.fit(exposure, density_kind).evaluate(exposure)


@dataclass(frozen=True)
class GpsModel:
    density_kind: DensityKind
    mean_model: RegressionModel
    schema: tuple[tuple[str, str, tuple[str, ...]], ...]
    feature_names: tuple[str, ...]
    marginal: MarginalDensity
    transforms: Mapping[str, tuple[ColumnTransform, ...]] = field(default_factory=dict)
    sd_global: float | None = None
    variance_model: RegressionModel | None = None
    residual_samples: np.ndarray | None = None
    residual_bandwidth: float | None = None

    def __post_init__(self) -> None:
        if self.density_kind == "normal":
            if self.sd_global is None or not self.sd_global > 0:
                raise ConfigError("normal GPS model needs a positive residual scale")
            if self.variance_model is not None or self.residual_samples is not None:
                raise ConfigError("normal GPS model carries no variance model")
        elif self.density_kind == "kernel":
            if self.variance_model is None or self.residual_samples is None:
                raise ConfigError("kernel GPS model needs a variance model and residuals")
            if self.residual_bandwidth is None or not self.residual_bandwidth > 0:
                raise ConfigError("kernel GPS model needs a positive residual bandwidth")
            if self.sd_global is not None:
                raise ConfigError("kernel GPS model carries no global residual scale")
        else:
            raise ConfigError(f"unknown density kind {self.density_kind!r}")

    def features(self, ds: Dataset) -> np.ndarray:
        if ds.schema() != self.schema:
            raise SchemaMismatch(
                f"dataset covariates {ds.covariate_names} do not match the GPS model schema "
                f"{[name for name, _, _ in self.schema]}"
            )
        X, _ = ds.feature_matrix(self.transforms)
        return X


@dataclass(frozen=True)
class GpsEstimate:
    ids: np.ndarray
    gps: np.ndarray
    marginal: np.ndarray
    model: GpsModel

    def __post_init__(self) -> None:
        n = np.asarray(self.ids).shape[0]
        for name in ("gps", "marginal"):
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if values.shape != (n,):
                raise SchemaMismatch(f"{name} vector is not aligned with ids")
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise ConfigError(f"{name} densities must be finite and positive")

    def aligned_with(self, ds: Dataset) -> bool:
        return bool(np.array_equal(self.ids, ds.ids))

    def restrict(self, ids: np.ndarray) -> GpsEstimate:
        """Entries whose id is in ``ids``, keeping this estimate's row order."""
        mask = np.isin(self.ids, ids)
        return GpsEstimate(self.ids[mask], self.gps[mask], self.marginal[mask], self.model)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"id": self.ids, "gps": self.gps, "marginal_density": self.marginal})


def predict_conditional_stats(model: GpsModel, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """E_hat(x_j) and sqrt(V_hat(x_j)) per row (the constant sigma for the normal kind)."""
    X = model.features(ds)
    mean = model.mean_model.predict(X)
    if model.density_kind == "normal":
        assert model.sd_global is not None
        sd = np.full(ds.n_rows, model.sd_global)
    else:
        assert model.variance_model is not None
        sd = np.sqrt(np.maximum(model.variance_model.predict(X), VARIANCE_FLOOR))
    return mean, sd


def conditional_density(
    model: GpsModel,
    e: float | np.ndarray,
    mean: np.ndarray,
    sd: np.ndarray,
    nthread: int = 1,
) -> np.ndarray:
    """q(e, x) from precomputed conditional stats; ``e`` is a scalar or a per-row vector."""
    z = (np.asarray(e, dtype=np.float64) - mean) / sd
    z = np.broadcast_to(z, mean.shape)
    if model.density_kind == "normal":
        q = norm.pdf(z) / sd
    else:
        assert model.residual_samples is not None and model.residual_bandwidth is not None
        q = kernel_density(model.residual_samples, model.residual_bandwidth, z, nthread) / sd
    return np.maximum(q, DENSITY_FLOOR)


def evaluate_gps_at(model: GpsModel, w_star: float | np.ndarray, ds: Dataset, nthread: int = 1) -> np.ndarray:
    mean, sd = predict_conditional_stats(model, ds)
    return conditional_density(model, w_star, mean, sd, nthread)


def gps_estimate_from_model(model: GpsModel, ds: Dataset, nthread: int = 1) -> GpsEstimate:
    """Evaluate a stored model at the observed exposures of ``ds``."""
    gps = evaluate_gps_at(model, ds.exposure, ds, nthread)
    marginal = model.marginal.evaluate(ds.exposure, nthread)
    return GpsEstimate(ids=ds.ids.copy(), gps=gps, marginal=marginal, model=model)


def estimate_gps(
    ds: Dataset,
    density_kind: DensityKind,
    learner_spec: LearnerSpec,
    rng_seed: int,
    nthread: int = 1,
    transforms: Mapping[str, Sequence[ColumnTransform]] | None = None,
) -> GpsEstimate:
    if density_kind not in ("normal", "kernel"):
        raise ConfigError(f"unknown density kind {density_kind!r}")
    if ds.n_rows < MIN_ROWS:
        raise InsufficientData(f"GPS estimation needs at least {MIN_ROWS} rows, got {ds.n_rows}")
    if not float(np.var(ds.exposure)) > 0:
        raise DegenerateExposure("exposure has zero variance")

    started = time.perf_counter()
    frozen_transforms = {name: tuple(fns) for name, fns in (transforms or {}).items() if fns}
    X, names = ds.feature_matrix(frozen_transforms)
    e = ds.exposure
    mean_model = fit_learner(learner_spec, X, e, rng_seed, nthread)
    resid = e - mean_model.predict(X)
    marginal = MarginalDensity.fit(e, density_kind)

    common = dict(
        density_kind=density_kind,
        mean_model=mean_model,
        schema=ds.schema(),
        feature_names=tuple(names),
        marginal=marginal,
        transforms=frozen_transforms,
    )
    if density_kind == "normal":
        sigma = float(np.sqrt(np.sum(resid**2) / ds.n_rows))
        if not sigma > 0:
            raise DegenerateVariance("mean model reproduces the exposure exactly; residual scale is zero")
        model = GpsModel(sd_global=sigma, **common)  # type: ignore[arg-type]
    else:
        # variance model reuses the mean model's learner spec
        variance_model = fit_learner(learner_spec, X, resid**2, rng_seed, nthread)
        sd = np.sqrt(np.maximum(variance_model.predict(X), VARIANCE_FLOOR))
        eps = resid / sd
        model = GpsModel(
            variance_model=variance_model,
            residual_samples=eps,
            residual_bandwidth=silverman_bandwidth(eps),
            **common,  # type: ignore[arg-type]
        )

    est = gps_estimate_from_model(model, ds, nthread)
    logger.debug(
        "estimated %s GPS with %s on %d rows x %d features in %.2fs",
        density_kind,
        learner_spec.describe(),
        ds.n_rows,
        X.shape[1],
        time.perf_counter() - started,
    )
    return est
