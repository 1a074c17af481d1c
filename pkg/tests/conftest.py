from __future__ import annotations

import logging
from collections.abc import Iterator

import numpy as np
import pytest

from causalgps.data.dataset import Covariate, Dataset
from causalgps.data.simulate import SimConfig, simulate_dataset
from causalgps.logging_setup import ROOT_LOGGER
from causalgps.models.gps import GpsModel, MarginalDensity
from causalgps.models.learners import LinearModel


@pytest.fixture(autouse=True)
def _reset_package_logger() -> Iterator[None]:
    # CLI runs install stderr handlers bound to the capture stream of that test
    yield
    logger = logging.getLogger(ROOT_LOGGER)
    for handler in list(logger.handlers):
        if getattr(handler, "_causalgps", False):
            logger.removeHandler(handler)
            handler.close()
    logger.setLevel(logging.NOTSET)


def one_covariate_dataset(x: np.ndarray, exposure: np.ndarray, outcome: np.ndarray | None = None) -> Dataset:
    return Dataset(
        ids=np.arange(len(x)),
        exposure=exposure,
        covariates=(Covariate("x", "numeric", x),),
        outcome=outcome,
    )


def identity_gps_model(ds: Dataset, sigma: float = 1.0) -> GpsModel:
    """Normal GPS with E_hat(x) = x and a fixed residual scale."""
    return GpsModel(
        density_kind="normal",
        mean_model=LinearModel(intercept=0.0, coef=np.array([1.0]), n_features=1),
        schema=ds.schema(),
        feature_names=("x",),
        marginal=MarginalDensity("normal", mean=0.0, sd=1.0),
        sd_global=sigma,
    )


@pytest.fixture(scope="session")
def sim_small() -> Dataset:
    ds, _ = simulate_dataset(SimConfig(n=400, seed=7))
    return ds
