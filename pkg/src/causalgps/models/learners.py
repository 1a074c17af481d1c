"""
Regression learners for the conditional mean and variance of the exposure.

Three learner kinds are available: weighted linear least squares, gradient-boosted
regression trees with squared-error loss, and a cross-validated convex stack of those two
(SuperLearner-style).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Protocol

import numpy as np
import scipy.linalg
from sklearn.model_selection import KFold
from sklearn.tree import DecisionTreeRegressor

from ..errors import ConfigError, InsufficientData, SchemaMismatch, SingularDesign

logger = logging.getLogger(__name__)

LearnerKind = Literal["linear", "gbt", "ensemble"]

RIDGE_JITTER = 1e-10
STACK_SWEEPS = 500
STACK_TOL = 1e-10


@dataclass(frozen=True)
class HyperParams:
    nrounds: int = 100
    eta: float = 0.3
    max_depth: int = 6
    min_child_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.nrounds < 1:
            raise ConfigError(f"nrounds must be positive, got {self.nrounds}")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.max_depth < 0:
            raise ConfigError(f"max_depth must be non-negative, got {self.max_depth}")
        if self.min_child_weight < 0:
            raise ConfigError(f"min_child_weight must be non-negative, got {self.min_child_weight}")

    def to_dict(self) -> dict[str, float | int]:
        return {
            "nrounds": self.nrounds,
            "eta": self.eta,
            "max_depth": self.max_depth,
            "min_child_weight": self.min_child_weight,
        }


@dataclass(frozen=True)
class HyperParamGrid:
    nrounds: tuple[int, ...] = (100,)
    eta: tuple[float, ...] = (0.3,)
    max_depth: tuple[int, ...] = (6,)
    min_child_weight: tuple[float, ...] = (1.0,)

    def __post_init__(self) -> None:
        for name in ("nrounds", "eta", "max_depth", "min_child_weight"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"hyperparameter grid for {name} is empty")
            object.__setattr__(self, name, values)
        # every candidate must be a valid HyperParams field on its own
        for nr in self.nrounds:
            HyperParams(nrounds=nr)
        for eta in self.eta:
            HyperParams(eta=eta)
        for depth in self.max_depth:
            HyperParams(max_depth=depth)
        for mcw in self.min_child_weight:
            HyperParams(min_child_weight=mcw)

    def to_dict(self) -> dict[str, list[float | int]]:
        return {
            "nrounds": list(self.nrounds),
            "eta": list(self.eta),
            "max_depth": list(self.max_depth),
            "min_child_weight": list(self.min_child_weight),
        }


def sample_hyperparams(grid: HyperParamGrid, rng: np.random.Generator) -> HyperParams:
    """Draw one value per field, uniformly from its candidate list.

    Consumes exactly four ``rng.integers`` draws, in the order nrounds, eta, max_depth,
    min_child_weight, whatever the list lengths.
    """
    picks = [int(rng.integers(len(values))) for values in
             (grid.nrounds, grid.eta, grid.max_depth, grid.min_child_weight)]
    return HyperParams(
        nrounds=int(grid.nrounds[picks[0]]),
        eta=float(grid.eta[picks[1]]),
        max_depth=int(grid.max_depth[picks[2]]),
        min_child_weight=float(grid.min_child_weight[picks[3]]),
    )


@dataclass(frozen=True)
class LearnerSpec:
    kind: LearnerKind = "linear"
    hyperparams: HyperParams = field(default_factory=HyperParams)
    base: tuple[LearnerSpec, ...] = ()
    k_folds: int = 5

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "gbt", "ensemble"):
            raise ConfigError(f"unknown learner kind {self.kind!r}")
        if self.kind == "ensemble":
            if not self.base:
                raise ConfigError("ensemble learner needs at least one base learner")
            if any(b.kind == "ensemble" for b in self.base):
                raise ConfigError("ensemble base learners must be linear or gbt")
            if self.k_folds < 2:
                raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")

    def with_hyperparams(self, hp: HyperParams) -> LearnerSpec:
        """Same spec with ``hp`` pushed into every boosted-tree component."""
        if self.kind == "ensemble":
            return replace(self, base=tuple(b.with_hyperparams(hp) for b in self.base))
        return replace(self, hyperparams=hp)

    def describe(self) -> str:
        if self.kind == "ensemble":
            return "ensemble(" + ",".join(b.describe() for b in self.base) + ")"
        return self.kind

    @classmethod
    def from_library(cls, names: Sequence[str], hp: HyperParams | None = None,
                     k_folds: int = 5) -> LearnerSpec:
        """Build a spec from a learner library list such as ``["linear", "gbt"]``.

        A single name gives that learner; several names give their stacked ensemble.
        """
        hp = hp or HyperParams()
        members = tuple(cls(kind=name, hyperparams=hp) for name in names)  # type: ignore[arg-type]
        if not members:
            raise ConfigError("learner library is empty")
        if len(members) == 1:
            return members[0]
        return cls(kind="ensemble", hyperparams=hp, base=members, k_folds=k_folds)


class RegressionModel(Protocol):
    kind: LearnerKind
    n_features: int

    def predict(self, features: np.ndarray) -> np.ndarray: ...


def _check_features(features: np.ndarray, n_features: int) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != n_features:
        raise SchemaMismatch(f"model expects {n_features} features, got {X.shape[1]}")
    return X


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray
    n_features: int
    kind: LearnerKind = "linear"

    def predict(self, features: np.ndarray) -> np.ndarray:
        X = _check_features(features, self.n_features)
        return self.intercept + X @ self.coef


@dataclass(frozen=True)
class BoostedTreesModel:
    base_score: float
    eta: float
    trees: tuple[DecisionTreeRegressor | None, ...]
    n_features: int
    kind: LearnerKind = "gbt"

    def staged_predict(self, features: np.ndarray) -> list[np.ndarray]:
        X = _check_features(features, self.n_features)
        pred = np.full(X.shape[0], self.base_score)
        stages = []
        for tree in self.trees:
            if tree is not None:
                pred = pred + self.eta * tree.predict(X)
            stages.append(pred)
        return stages

    def predict(self, features: np.ndarray) -> np.ndarray:
        X = _check_features(features, self.n_features)
        pred = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            if tree is not None:
                pred = pred + self.eta * tree.predict(X)
        return pred


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple[RegressionModel, ...]
    weights: np.ndarray
    cv_risks: np.ndarray
    n_features: int
    kind: LearnerKind = "ensemble"

    def predict(self, features: np.ndarray) -> np.ndarray:
        X = _check_features(features, self.n_features)
        pred = np.zeros(X.shape[0])
        for alpha, member in zip(self.weights, self.members):
            if alpha > 0.0:
                pred = pred + alpha * member.predict(X)
        return pred


def fit_linear(
    features: np.ndarray,
    targets: np.ndarray,
    sample_weights: np.ndarray | None = None,
) -> LinearModel:
    """Weighted least squares via the normal equations with a 1e-10 diagonal jitter."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(targets, dtype=np.float64)
    n, p = X.shape
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (n,) or y.shape != (n,):
        raise SchemaMismatch("features, targets and weights must be aligned")
    if np.any(w < 0) or not np.any(w > 0):
        raise ConfigError("sample weights must be non-negative and not all zero")
    if int(np.count_nonzero(w)) < p + 1:
        raise SingularDesign(f"need at least {p + 1} weighted rows for {p} features")

    design = np.column_stack([np.ones(n), X])
    scaled = design * np.sqrt(w)[:, None]
    if np.linalg.matrix_rank(scaled) < p + 1:
        raise SingularDesign("design matrix is rank deficient")
    gram = design.T @ (design * w[:, None])
    gram[np.diag_indices_from(gram)] += RIDGE_JITTER
    rhs = design.T @ (w * y)
    try:
        beta = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise SingularDesign(str(e)) from e
    return LinearModel(intercept=float(beta[0]), coef=beta[1:].copy(), n_features=p)


def fit_gbt(
    features: np.ndarray,
    targets: np.ndarray,
    hp: HyperParams,
    rng_seed: int,
) -> BoostedTreesModel:
    """Squared-error gradient boosting on exact greedy regression trees.

    Starts from mean(y) and adds ``eta * tree_t`` per round, each tree fit to the current
    residuals. Nodes holding fewer than ``min_child_weight`` rows are not split.
    ``max_depth=0`` trees have no splits and contribute nothing.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(targets, dtype=np.float64)
    if X.shape[0] < 2:
        raise InsufficientData("boosting needs at least two rows")

    base = float(np.mean(y))
    pred = np.full(y.shape[0], base)
    min_split = max(2, math.ceil(hp.min_child_weight))
    trees: list[DecisionTreeRegressor | None] = []
    for t in range(hp.nrounds):
        if hp.max_depth == 0:
            trees.append(None)
            continue
        tree = DecisionTreeRegressor(
            max_depth=hp.max_depth,
            min_samples_split=min_split,
            random_state=rng_seed,
        )
        tree.fit(X, y - pred)
        pred = pred + hp.eta * tree.predict(X)
        trees.append(tree)
        if logger.isEnabledFor(5):
            logger.log(5, "gbt round %d mse=%.6g", t + 1, float(np.mean((y - pred) ** 2)))
    return BoostedTreesModel(base_score=base, eta=hp.eta, trees=tuple(trees), n_features=X.shape[1])


def simplex_least_squares(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Convex weights minimising ||y - Z a||^2 over the probability simplex.

    Coordinate descent along simplex edges: each move shifts mass between two
    coordinates by the exact line minimiser, clipped to stay feasible. Starts from the
    best single column, so the result never does worse than any single learner.
    """
    n, k = Z.shape
    risks = np.mean((y[:, None] - Z) ** 2, axis=0)
    alpha = np.zeros(k)
    alpha[int(np.argmin(risks))] = 1.0
    if k == 1:
        return alpha
    resid = y - Z @ alpha
    for _ in range(STACK_SWEEPS):
        largest = 0.0
        for i in range(k):
            for j in range(k):
                if i == j or alpha[j] <= 0.0:
                    continue
                d = Z[:, i] - Z[:, j]
                dd = float(d @ d)
                if dd == 0.0:
                    continue
                step = float(resid @ d) / dd
                step = min(max(step, -alpha[i]), alpha[j])
                if step == 0.0:
                    continue
                alpha[i] += step
                alpha[j] -= step
                resid = resid - step * d
                largest = max(largest, abs(step))
        if largest < STACK_TOL:
            break
    alpha = np.clip(alpha, 0.0, None)
    return alpha / alpha.sum()


def fit_ensemble(
    features: np.ndarray,
    targets: np.ndarray,
    base_specs: Sequence[LearnerSpec],
    k_folds: int,
    rng_seed: int,
    nthread: int = 1,
) -> EnsembleModel:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(targets, dtype=np.float64)
    n = X.shape[0]
    if n < k_folds:
        raise InsufficientData(f"{k_folds}-fold stacking needs at least {k_folds} rows, got {n}")

    folds = list(KFold(n_splits=k_folds, shuffle=True, random_state=rng_seed).split(X))
    jobs = [(j, train, test) for j in range(len(base_specs)) for train, test in folds]

    def _cv_job(job: tuple[int, np.ndarray, np.ndarray]) -> np.ndarray:
        j, train, test = job
        model = fit_learner(base_specs[j], X[train], y[train], rng_seed)
        return model.predict(X[test])

    cv_pred = np.zeros((n, len(base_specs)))
    if nthread > 1:
        with ThreadPoolExecutor(max_workers=nthread) as ex:
            outputs = list(ex.map(_cv_job, jobs))
    else:
        outputs = [_cv_job(job) for job in jobs]
    for (j, _, test), out in zip(jobs, outputs):
        cv_pred[test, j] = out

    alpha = simplex_least_squares(cv_pred, y)
    cv_risks = np.mean((y[:, None] - cv_pred) ** 2, axis=0)
    members = tuple(fit_learner(spec, X, y, rng_seed) for spec in base_specs)
    logger.debug(
        "stacked %s: weights=%s cv_risks=%s",
        [s.describe() for s in base_specs],
        np.round(alpha, 6).tolist(),
        np.round(cv_risks, 6).tolist(),
    )
    return EnsembleModel(members=members, weights=alpha, cv_risks=cv_risks, n_features=X.shape[1])


def fit_learner(
    spec: LearnerSpec,
    features: np.ndarray,
    targets: np.ndarray,
    rng_seed: int,
    nthread: int = 1,
) -> RegressionModel:
    if spec.kind == "linear":
        return fit_linear(features, targets)
    if spec.kind == "gbt":
        return fit_gbt(features, targets, spec.hyperparams, rng_seed)
    return fit_ensemble(features, targets, spec.base, spec.k_folds, rng_seed, nthread)
