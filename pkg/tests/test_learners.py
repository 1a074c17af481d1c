from __future__ import annotations

import numpy as np
import pytest
from sklearn.model_selection import KFold

from causalgps.errors import ConfigError, SchemaMismatch, SingularDesign
from causalgps.models.learners import (
    HyperParamGrid,
    HyperParams,
    LearnerSpec,
    fit_ensemble,
    fit_gbt,
    fit_learner,
    fit_linear,
    sample_hyperparams,
    simplex_least_squares,
)


def _linear_data(n: int = 200, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    return X, 1.0 + 2.0 * X[:, 0] - 3.0 * X[:, 1]


def test_fit_linear_recovers_coefficients() -> None:
    X, y = _linear_data()
    model = fit_linear(X, y)
    assert model.intercept == pytest.approx(1.0, abs=1e-8)
    assert model.coef.tolist() == pytest.approx([2.0, -3.0], abs=1e-8)


def test_fit_linear_weights_drop_rows() -> None:
    X, y = _linear_data()
    y_bad = y.copy()
    y_bad[:10] += 100.0
    w = np.ones_like(y)
    w[:10] = 0.0
    model = fit_linear(X, y_bad, w)
    assert model.coef.tolist() == pytest.approx([2.0, -3.0], abs=1e-8)


def test_fit_linear_rank_deficient() -> None:
    X, y = _linear_data()
    with pytest.raises(SingularDesign):
        fit_linear(np.column_stack([X[:, 0], X[:, 0]]), y)


def test_predict_checks_feature_count() -> None:
    X, y = _linear_data()
    model = fit_linear(X, y)
    with pytest.raises(SchemaMismatch):
        model.predict(X[:, :1])


def test_hyperparams_validation() -> None:
    with pytest.raises(ConfigError):
        HyperParams(eta=0.0)
    with pytest.raises(ConfigError):
        HyperParams(nrounds=0)
    with pytest.raises(ConfigError):
        HyperParamGrid(max_depth=())
    assert HyperParams(max_depth=0).max_depth == 0


def test_sample_hyperparams_is_seeded() -> None:
    grid = HyperParamGrid(nrounds=(10, 20, 30), eta=(0.1, 0.3), max_depth=(2, 3), min_child_weight=(1.0,))
    a = sample_hyperparams(grid, np.random.default_rng(5))
    b = sample_hyperparams(grid, np.random.default_rng(5))
    assert a == b
    assert a.nrounds in grid.nrounds and a.eta in grid.eta and a.max_depth in grid.max_depth


def test_gbt_depth_zero_predicts_mean() -> None:
    X, y = _linear_data(50)
    model = fit_gbt(X, y, HyperParams(nrounds=5, max_depth=0), rng_seed=1)
    assert np.allclose(model.predict(X), np.mean(y))


def test_gbt_reduces_training_error() -> None:
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(300, 1))
    y = np.sin(2 * X[:, 0])
    model = fit_gbt(X, y, HyperParams(nrounds=30, eta=0.3, max_depth=3), rng_seed=1)
    stages = model.staged_predict(X)
    mse = [float(np.mean((y - s) ** 2)) for s in stages]
    assert len(mse) == 30
    assert mse[-1] < 0.1 * float(np.var(y))
    assert np.allclose(stages[-1], model.predict(X))


def test_simplex_weights_pick_the_exact_column() -> None:
    rng = np.random.default_rng(4)
    y = rng.standard_normal(100)
    Z = np.column_stack([rng.standard_normal(100), y, y + 0.5])
    alpha = simplex_least_squares(Z, y)
    assert alpha.sum() == pytest.approx(1.0)
    assert np.all(alpha >= 0)
    assert alpha[1] == pytest.approx(1.0, abs=1e-6)


def test_simplex_weights_mix_two_biased_columns() -> None:
    y = np.linspace(-1, 1, 50)
    Z = np.column_stack([y + 1.0, y - 1.0])
    alpha = simplex_least_squares(Z, y)
    assert alpha.tolist() == pytest.approx([0.5, 0.5], abs=1e-8)


def test_learner_spec_from_library() -> None:
    assert LearnerSpec.from_library(["linear"]).kind == "linear"
    stacked = LearnerSpec.from_library(["linear", "gbt"], HyperParams(nrounds=5), k_folds=3)
    assert stacked.kind == "ensemble"
    assert stacked.describe() == "ensemble(linear,gbt)"
    assert stacked.base[1].hyperparams.nrounds == 5
    with pytest.raises(ConfigError):
        LearnerSpec.from_library([])


def test_ensemble_prefers_linear_on_linear_data() -> None:
    X, y = _linear_data(150)
    spec = LearnerSpec.from_library(["linear", "gbt"], HyperParams(nrounds=5, max_depth=2), k_folds=3)
    model = fit_ensemble(X, y, spec.base, spec.k_folds, rng_seed=2)
    assert model.weights.sum() == pytest.approx(1.0)
    assert model.weights[0] > 0.9
    assert np.max(np.abs(model.predict(X) - y)) < 0.5


def test_ensemble_is_thread_count_invariant() -> None:
    X, y = _linear_data(120, seed=9)
    spec = LearnerSpec.from_library(["linear", "gbt"], HyperParams(nrounds=8, max_depth=2), k_folds=4)
    serial = fit_learner(spec, X, y, rng_seed=11, nthread=1)
    threaded = fit_learner(spec, X, y, rng_seed=11, nthread=4)
    assert np.array_equal(serial.predict(X), threaded.predict(X))


def test_fit_linear_matches_weighted_normal_equations() -> None:
    # weighted means 11/7 and 13/7 give slope 39/40
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([1.0, 1.0, 2.0, 4.0])
    w = np.array([1.0, 2.0, 3.0, 1.0])
    model = fit_linear(x, y, w)
    assert model.coef[0] == pytest.approx(0.975, abs=1e-8)
    assert model.intercept == pytest.approx(0.325, abs=1e-8)

    repeated = fit_linear(np.repeat(x, w.astype(int)), np.repeat(y, w.astype(int)))
    assert repeated.coef[0] == pytest.approx(model.coef[0], abs=1e-8)
    assert repeated.intercept == pytest.approx(model.intercept, abs=1e-8)


def test_gbt_stump_takes_the_best_split() -> None:
    x = np.linspace(0.0, 1.0, 23)
    y = np.where(x < 0.41, 0.0, 1.0) + 0.05 * np.sin(11.0 * x)
    model = fit_gbt(x, y, HyperParams(nrounds=1, eta=1.0, max_depth=1, min_child_weight=1.0), rng_seed=0)

    best_sse, expected = np.inf, None
    for k in range(1, x.size):
        left, right = y[:k], y[k:]
        sse = float(np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2))
        if sse < best_sse:
            best_sse = sse
            expected = np.concatenate([np.full(k, left.mean()), np.full(x.size - k, right.mean())])
    assert model.predict(x) == pytest.approx(expected, abs=1e-12)


def test_gbt_training_error_never_increases() -> None:
    rng = np.random.default_rng(12)
    X = rng.uniform(-2, 2, size=(200, 2))
    y = np.sin(2 * X[:, 0]) * X[:, 1] + 0.1 * rng.standard_normal(200)
    model = fit_gbt(X, y, HyperParams(nrounds=30, eta=0.3, max_depth=3), rng_seed=4)
    mse = [float(np.var(y))] + [float(np.mean((y - s) ** 2)) for s in model.staged_predict(X)]
    assert np.all(np.diff(mse) <= 1e-12)


def test_ensemble_weights_beat_a_fine_simplex_grid() -> None:
    rng = np.random.default_rng(21)
    X = rng.uniform(-2, 2, size=(120, 1))
    y = np.sin(3 * X[:, 0]) + 0.5 * X[:, 0] + 0.3 * rng.standard_normal(120)
    specs = (LearnerSpec(kind="linear"), LearnerSpec(kind="gbt", hyperparams=HyperParams(nrounds=20, max_depth=2)))
    model = fit_ensemble(X, y, specs, k_folds=4, rng_seed=6)

    cv_pred = np.zeros((120, 2))
    for train, test in KFold(n_splits=4, shuffle=True, random_state=6).split(X):
        for j, spec in enumerate(specs):
            cv_pred[test, j] = fit_learner(spec, X[train], y[train], 6).predict(X[test])
    assert model.cv_risks == pytest.approx(np.mean((y[:, None] - cv_pred) ** 2, axis=0), rel=1e-12)

    grid = np.linspace(0.0, 1.0, 1001)
    risks = np.array([np.mean((y - a * cv_pred[:, 0] - (1 - a) * cv_pred[:, 1]) ** 2) for a in grid])
    fitted = float(np.mean((y - cv_pred @ model.weights) ** 2))
    assert fitted <= float(risks.min()) + 1e-12
    assert model.weights[0] == pytest.approx(grid[int(np.argmin(risks))], abs=0.0011)
