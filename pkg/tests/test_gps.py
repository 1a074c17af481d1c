from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import identity_gps_model, one_covariate_dataset

from causalgps.data.dataset import Covariate, Dataset
from causalgps.errors import DegenerateExposure, InsufficientData, SchemaMismatch
from causalgps.models.gps import (
    MarginalDensity,
    conditional_density,
    estimate_gps,
    evaluate_gps_at,
    gps_estimate_from_model,
    kernel_density,
    predict_conditional_stats,
    silverman_bandwidth,
)
from causalgps.models.learners import LearnerSpec, fit_linear

LINEAR = LearnerSpec(kind="linear")


def test_normal_gps_at_the_mean() -> None:
    ds = one_covariate_dataset(np.array([0.3, -1.2, 2.0]), np.array([0.3, -1.2, 2.0]))
    model = identity_gps_model(ds, sigma=2.0)
    est = gps_estimate_from_model(model, ds)
    assert est.gps == pytest.approx(1.0 / (2.0 * math.sqrt(2.0 * math.pi)))
    assert est.gps[0] == pytest.approx(0.199471, abs=1e-6)


def test_kernel_density_integrates_to_one() -> None:
    samples = np.random.default_rng(1).standard_normal(300)
    h = silverman_bandwidth(samples)
    grid = np.linspace(samples.min() - 6 * h, samples.max() + 6 * h, 4001)
    f = kernel_density(samples, h, grid)
    assert np.trapz(f, grid) == pytest.approx(1.0, abs=1e-3)


def test_kernel_density_single_sample_is_a_normal_pdf() -> None:
    f = kernel_density([0.0], 0.5, [0.0, 0.5])
    assert f[0] == pytest.approx(1.0 / (0.5 * math.sqrt(2 * math.pi)))
    assert f[1] == pytest.approx(math.exp(-0.5) / (0.5 * math.sqrt(2 * math.pi)))


def test_silverman_bandwidth_scales_with_samples() -> None:
    samples = np.random.default_rng(2).standard_normal(200)
    assert silverman_bandwidth(3.0 * samples) == pytest.approx(3.0 * silverman_bandwidth(samples))


def test_estimate_gps_values_are_aligned_and_positive(sim_small: Dataset) -> None:
    est = estimate_gps(sim_small, "normal", LINEAR, rng_seed=1)
    assert np.array_equal(est.ids, sim_small.ids)
    assert np.all(est.gps > 0) and np.all(est.marginal > 0)
    again = gps_estimate_from_model(est.model, sim_small)
    assert np.array_equal(again.gps, est.gps)
    assert list(est.to_frame().columns) == ["id", "gps", "marginal_density"]


def test_gps_at_observed_exposure_matches_evaluation(sim_small: Dataset) -> None:
    est = estimate_gps(sim_small, "kernel", LINEAR, rng_seed=1)
    assert np.array_equal(evaluate_gps_at(est.model, sim_small.exposure, sim_small), est.gps)


@pytest.mark.parametrize("kind", ["normal", "kernel"])
def test_conditional_density_integrates_to_one(sim_small: Dataset, kind: str) -> None:
    est = estimate_gps(sim_small, kind, LINEAR, rng_seed=1)  # type: ignore[arg-type]
    row = sim_small.take(np.array([5]))
    mean, sd = predict_conditional_stats(est.model, row)
    if kind == "normal":
        half = 8.0 * float(sd[0])
    else:
        eps = est.model.residual_samples
        assert eps is not None and est.model.residual_bandwidth is not None
        half = float(sd[0]) * (float(np.max(np.abs(eps))) + 6.0 * est.model.residual_bandwidth)
    grid = np.linspace(mean[0] - half, mean[0] + half, 4001)
    q = np.array([conditional_density(est.model, t, mean, sd)[0] for t in grid])
    assert np.trapz(q, grid) == pytest.approx(1.0, abs=1e-3)


def test_marginal_density_normal_uses_population_sd() -> None:
    e = np.array([1.0, 2.0, 3.0, 4.0])
    m = MarginalDensity.fit(e, "normal")
    assert m.mean == 2.5
    assert m.sd == pytest.approx(math.sqrt(1.25))


def test_schema_mismatch_on_other_dataset(sim_small: Dataset) -> None:
    est = estimate_gps(sim_small, "normal", LINEAR, rng_seed=1)
    other = Dataset(
        ids=sim_small.ids,
        exposure=sim_small.exposure,
        covariates=(Covariate("z", "numeric", sim_small.exposure),),
    )
    with pytest.raises(SchemaMismatch):
        gps_estimate_from_model(est.model, other)


def test_estimate_gps_needs_rows_and_variance() -> None:
    x = np.linspace(0, 1, 5)
    with pytest.raises(InsufficientData):
        estimate_gps(one_covariate_dataset(x, x), "normal", LINEAR, rng_seed=0)
    x = np.linspace(0, 1, 20)
    with pytest.raises(DegenerateExposure):
        estimate_gps(one_covariate_dataset(x, np.ones(20)), "normal", LINEAR, rng_seed=0)


def test_estimate_gps_is_thread_count_invariant(sim_small: Dataset) -> None:
    spec = LearnerSpec.from_library(["linear", "gbt"], k_folds=3)
    a = estimate_gps(sim_small, "kernel", spec, rng_seed=4, nthread=1)
    b = estimate_gps(sim_small, "kernel", spec, rng_seed=4, nthread=4)
    assert np.array_equal(a.gps, b.gps)


def _gaussian_kde(samples: np.ndarray, h: float, t: float) -> float:
    z = (t - samples) / h
    return float(np.sum(np.exp(-0.5 * z * z))) / (math.sqrt(2.0 * math.pi) * samples.size * h)


def _silverman(samples: np.ndarray) -> float:
    q75, q25 = np.percentile(samples, [75, 25])
    return 0.9 * min(float(np.std(samples, ddof=1)), float(q75 - q25) / 1.34) * samples.size ** (-0.2)


def test_kernel_gps_matches_direct_computation(sim_small: Dataset) -> None:
    est = estimate_gps(sim_small, "kernel", LINEAR, rng_seed=3)
    model = est.model
    X, _ = sim_small.feature_matrix()
    e = sim_small.exposure

    resid = e - model.mean_model.predict(X)
    variance = fit_linear(X, resid**2)
    assert variance.coef == pytest.approx(model.variance_model.coef, rel=1e-12)
    sd = np.sqrt(np.maximum(variance.predict(X), 1e-8))
    eps = resid / sd
    h = _silverman(eps)
    assert model.residual_bandwidth == pytest.approx(h, rel=1e-12)

    gps = [_gaussian_kde(eps, h, eps[j]) / sd[j] for j in range(sim_small.n_rows)]
    assert est.gps == pytest.approx(np.array(gps), rel=1e-12)
    h_e = _silverman(e)
    marginal = [_gaussian_kde(e, h_e, e[j]) for j in range(sim_small.n_rows)]
    assert est.marginal == pytest.approx(np.array(marginal), rel=1e-12)


def test_kernel_and_normal_gps_agree_on_normal_residuals() -> None:
    rng = np.random.default_rng(31)
    x = rng.standard_normal(20000)
    ds = one_covariate_dataset(x, x + rng.standard_normal(20000))
    normal = estimate_gps(ds, "normal", LINEAR, rng_seed=1)
    kernel = estimate_gps(ds, "kernel", LINEAR, rng_seed=1, nthread=4)
    assert float(np.mean(np.abs(kernel.gps - normal.gps))) < 0.02
