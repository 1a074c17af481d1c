"""Synthetic confounded data with a known exposure-response function.

Covariates c1..c4 are standard normal, c5 is +-0.5 with equal probability and c6 is
uniform on (-1, 1). Every covariate has population mean zero, so the causal ERF equals
the structural exposure term of the outcome model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from ..errors import ConfigError
from .dataset import Covariate, Dataset

ErfShape = Literal["linear", "curved"]

EXPOSURE_COEFS: dict[str, float] = {"c1": 0.8, "c2": 0.4, "c3": -0.6, "c4": 0.3, "c5": 0.5, "c6": 0.4}
OUTCOME_COEFS: dict[str, float] = {"c1": 0.3, "c2": 0.3, "c3": 0.2, "c4": -0.2, "c5": 0.2, "c6": -0.1}
COVARIATE_VARIANCE: dict[str, float] = {
    "c1": 1.0,
    "c2": 1.0,
    "c3": 1.0,
    "c4": 1.0,
    "c5": 0.25,
    "c6": 1.0 / 3.0,
}
INTERCEPT = 1.0
SLOPE = 0.5
CURVATURE = 0.1


@dataclass(frozen=True)
class SimConfig:
    n: int = 5000
    erf_shape: ErfShape = "linear"
    heteroskedastic: bool = False
    seed: int = 249

    def __post_init__(self) -> None:
        if self.n < 10:
            raise ConfigError(f"simulation needs n >= 10, got {self.n}")
        if self.erf_shape not in ("linear", "curved"):
            raise ConfigError(f"unknown erf shape {self.erf_shape!r}")


def true_erf(shape: ErfShape, e: float | np.ndarray) -> float | np.ndarray:
    if shape == "linear":
        return INTERCEPT + SLOPE * e
    if shape == "curved":
        return INTERCEPT + SLOPE * e + CURVATURE * e * e
    raise ConfigError(f"unknown erf shape {shape!r}")


def exposure_variance(heteroskedastic: bool) -> float:
    confounded = sum(EXPOSURE_COEFS[k] ** 2 * COVARIATE_VARIANCE[k] for k in EXPOSURE_COEFS)
    if heteroskedastic:
        # E[(0.5 + 0.25|c1|)^2] with E|c1| = sqrt(2/pi)
        noise = 0.25 + 0.25 * math.sqrt(2.0 / math.pi) + 0.0625
    else:
        noise = 1.0
    return confounded + noise


def naive_slope(heteroskedastic: bool = False) -> float:
    """Population OLS slope of Y on E alone.

    The quadratic term adds nothing for the curved shape because E is symmetric about 0.
    """
    confounding = sum(
        EXPOSURE_COEFS[k] * OUTCOME_COEFS[k] * COVARIATE_VARIANCE[k] for k in EXPOSURE_COEFS
    )
    return SLOPE + confounding / exposure_variance(heteroskedastic)


def simulate_dataset(cfg: SimConfig) -> tuple[Dataset, dict[str, Any]]:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    normals = rng.standard_normal((n, 4))
    cols = {
        "c1": normals[:, 0],
        "c2": normals[:, 1],
        "c3": normals[:, 2],
        "c4": normals[:, 3],
        "c5": rng.choice(np.array([-0.5, 0.5]), size=n),
        "c6": rng.uniform(-1.0, 1.0, size=n),
    }
    eta = rng.standard_normal(n)
    if cfg.heteroskedastic:
        eta = eta * (0.5 + 0.25 * np.abs(cols["c1"]))
    exposure = sum(EXPOSURE_COEFS[k] * cols[k] for k in EXPOSURE_COEFS) + eta
    outcome = (
        np.asarray(true_erf(cfg.erf_shape, exposure))
        + sum(OUTCOME_COEFS[k] * cols[k] for k in OUTCOME_COEFS)
        + rng.standard_normal(n)
    )

    ds = Dataset(
        ids=np.arange(n),
        exposure=exposure,
        covariates=tuple(Covariate(name, "numeric", values) for name, values in cols.items()),
        outcome=outcome,
        exposure_name="exposure",
        outcome_name="outcome",
    )
    truth: dict[str, Any] = {
        "shape": cfg.erf_shape,
        "heteroskedastic": cfg.heteroskedastic,
        "n": n,
        "seed": cfg.seed,
        "erf": {
            "intercept": INTERCEPT,
            "slope": SLOPE,
            "curvature": CURVATURE if cfg.erf_shape == "curved" else 0.0,
        },
        "exposure_coefficients": dict(EXPOSURE_COEFS),
        "outcome_coefficients": dict(OUTCOME_COEFS),
        "exposure_variance": exposure_variance(cfg.heteroskedastic),
        "naive_slope": naive_slope(cfg.heteroskedastic),
    }
    return ds, truth
