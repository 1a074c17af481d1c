from __future__ import annotations

import numpy as np
import pytest

from causalgps.data.simulate import SimConfig, exposure_variance, naive_slope, simulate_dataset, true_erf
from causalgps.errors import ConfigError
from causalgps.validation.schemas import validate_truth


def test_same_seed_same_data() -> None:
    a, _ = simulate_dataset(SimConfig(n=100, seed=3))
    b, _ = simulate_dataset(SimConfig(n=100, seed=3))
    c, _ = simulate_dataset(SimConfig(n=100, seed=4))
    assert np.array_equal(a.exposure, b.exposure)
    assert np.array_equal(a.outcome, b.outcome)
    assert not np.array_equal(a.exposure, c.exposure)


def test_layout() -> None:
    ds, truth = simulate_dataset(SimConfig(n=50, erf_shape="curved"))
    assert ds.covariate_names == ["c1", "c2", "c3", "c4", "c5", "c6"]
    assert set(np.unique(ds.covariate("c5").values)) == {-0.5, 0.5}
    assert list(ds.to_frame().columns) == ["id", "exposure", "c1", "c2", "c3", "c4", "c5", "c6", "outcome"]
    assert truth["erf"]["curvature"] == 0.1
    validate_truth(truth)


def test_naive_slope_constant() -> None:
    assert naive_slope() == pytest.approx(0.58101, abs=1e-5)
    _, truth = simulate_dataset(SimConfig(n=20))
    assert truth["naive_slope"] == naive_slope()
    assert truth["erf"]["curvature"] == 0.0


def test_exposure_variance_matches_samples() -> None:
    for hetero in (False, True):
        ds, _ = simulate_dataset(SimConfig(n=40000, heteroskedastic=hetero, seed=1))
        assert np.var(ds.exposure) == pytest.approx(exposure_variance(hetero), rel=0.03)


def test_true_erf_shapes() -> None:
    assert true_erf("linear", 2.0) == 2.0
    assert true_erf("curved", 2.0) == pytest.approx(2.4)
    with pytest.raises(ConfigError):
        true_erf("cubic", 1.0)  # type: ignore[arg-type]


def test_config_validation() -> None:
    with pytest.raises(ConfigError):
        SimConfig(n=5)
    with pytest.raises(ConfigError):
        SimConfig(erf_shape="flat")  # type: ignore[arg-type]
