"""
Pseudo-population search loop.

Each attempt re-estimates the GPS under freshly sampled hyperparameters (and, optionally,
an accumulated set of covariate transforms), builds a matched or weighted
pseudo-population and scores its covariate balance. The loop stops at the first attempt
that passes the balance threshold or after ``max_attempt`` attempts, and returns the
best-balanced attempt.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any, Union

import numpy as np

from ..data.dataset import (
    ColumnTransform,
    Covariate,
    Dataset,
    QuantilePair,
    trim_by_exposure_quantiles,
    trim_by_gps_quantiles,
)
from ..errors import (
    AllAttemptsFailedConstruction,
    CausalGPSError,
    ConfigError,
    InsufficientData,
    NonNumericColumn,
)
from ..models.gps import DensityKind, GpsModel, estimate_gps, gps_estimate_from_model
from ..models.learners import HyperParamGrid, HyperParams, LearnerSpec, sample_hyperparams
from ..versioning.determinism import canonical_params, config_hash
from .balance import (
    THRESHOLD_TYPES,
    BalanceReport,
    ThresholdType,
    balance_report,
    check_balance,
)
from .matching import MatchConfig, generate_matched_pseudopop
from .pseudo_population import Approach, PseudoPopulation
from .weighting import WeightConfig, generate_weighted_pseudopop

logger = logging.getLogger(__name__)

Transformer = Union[str, Callable[[np.ndarray], np.ndarray]]


def pow2(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) ** 2


def pow3(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) ** 3


TRANSFORMERS: dict[str, ColumnTransform] = {"pow2": pow2, "pow3": pow3}


def transformer_name(t: Transformer) -> str:
    return t if isinstance(t, str) else getattr(t, "__name__", repr(t))


def resolve_transformer(t: Transformer) -> ColumnTransform:
    if callable(t):
        return t
    try:
        return TRANSFORMERS[t]
    except KeyError:
        raise ConfigError(f"unknown transformer {t!r}; available: {sorted(TRANSFORMERS)}") from None


def apply_transformer(name: Transformer, column: np.ndarray | Covariate) -> np.ndarray:
    """Elementwise x^2, x^3 or a user function. Categorical columns are refused."""
    if isinstance(column, Covariate):
        if column.kind != "numeric":
            raise NonNumericColumn(f"covariate '{column.name}' is categorical and cannot be transformed")
        column = column.values
    col = np.asarray(column)
    if col.dtype == np.bool_ or not np.issubdtype(col.dtype, np.number):
        raise NonNumericColumn("transformers apply to numeric columns only")
    return np.asarray(resolve_transformer(name)(col.astype(np.float64)), dtype=np.float64)


@dataclass(frozen=True)
class TunerConfig:
    ci_appr: Approach = "weighting"
    gps_density: DensityKind = "normal"
    exposure_trim_qtls: QuantilePair = field(default_factory=lambda: QuantilePair(0.01, 0.99))
    gps_trim_qtls: QuantilePair = field(default_factory=lambda: QuantilePair(0.0, 1.0))
    use_cov_transform: bool = False
    transformers: tuple[Transformer, ...] = ("pow2", "pow3")
    hyperparam_grid: HyperParamGrid = field(default_factory=HyperParamGrid)
    sl_lib: tuple[str, ...] = ("gbt",)
    k_folds: int = 5
    max_attempt: int = 10
    covar_bl_trs: float = 0.1
    covar_bl_trs_type: ThresholdType = "maximal"
    match_cfg: MatchConfig | None = None
    weight_cfg: WeightConfig = field(default_factory=WeightConfig)
    rng_seed: int = 249
    nthread: int = 1
    include_original_data: bool = False

    def __post_init__(self) -> None:
        if self.ci_appr not in ("matching", "weighting"):
            raise ConfigError(f"ci_appr must be 'matching' or 'weighting', got {self.ci_appr!r}")
        if self.gps_density not in ("normal", "kernel"):
            raise ConfigError(f"gps_density must be 'normal' or 'kernel', got {self.gps_density!r}")
        if self.ci_appr == "matching" and self.match_cfg is None:
            raise ConfigError("matching requires a match configuration (delta_n)")
        if self.max_attempt < 1:
            raise ConfigError(f"max_attempt must be >= 1, got {self.max_attempt}")
        if not self.covar_bl_trs > 0:
            raise ConfigError(f"covar_bl_trs must be positive, got {self.covar_bl_trs}")
        if self.covar_bl_trs_type not in THRESHOLD_TYPES:
            raise ConfigError(f"covar_bl_trs_type must be one of {THRESHOLD_TYPES}")
        if self.nthread < 1:
            raise ConfigError(f"nthread must be >= 1, got {self.nthread}")
        object.__setattr__(self, "transformers", tuple(self.transformers))
        if self.use_cov_transform and not self.transformers:
            raise ConfigError("use_cov_transform needs at least one transformer")
        for t in self.transformers:
            resolve_transformer(t)
        for name in self.sl_lib:
            if name not in ("linear", "gbt"):
                raise ConfigError(f"unknown learner {name!r} in sl_lib")
        self.learner_spec(HyperParams())

    def learner_spec(self, hp: HyperParams) -> LearnerSpec:
        return LearnerSpec.from_library(self.sl_lib, hp, self.k_folds)

    def to_params(self) -> dict[str, Any]:
        """Echoed parameters; ``nthread`` never appears so outputs are thread-count free."""
        params: dict[str, Any] = {
            "ci_appr": self.ci_appr,
            "gps_density": self.gps_density,
            "exposure_trim_qtls": self.exposure_trim_qtls.as_list(),
            "gps_trim_qtls": self.gps_trim_qtls.as_list(),
            "use_cov_transform": self.use_cov_transform,
            "transformers": [transformer_name(t) for t in self.transformers],
            "hyperparam_grid": self.hyperparam_grid.to_dict(),
            "sl_lib": list(self.sl_lib),
            "k_folds": self.k_folds,
            "max_attempt": self.max_attempt,
            "covar_bl_trs": self.covar_bl_trs,
            "covar_bl_trs_type": self.covar_bl_trs_type,
            "rng_seed": self.rng_seed,
            "include_original_data": self.include_original_data,
        }
        if self.ci_appr == "matching":
            assert self.match_cfg is not None
            params["match"] = self.match_cfg.to_dict()
        else:
            params["weight"] = self.weight_cfg.to_dict()
        return canonical_params(params)


@dataclass(frozen=True)
class AttemptRecord:
    attempt: int
    seed: int
    hyperparams: HyperParams | None
    transforms: dict[str, list[str]]
    transform_applied: dict[str, str] | None = None
    adjusted: dict[str, float] | None = None
    selected: float | None = None
    passed: bool = False
    n_rows: int | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "attempt": self.attempt,
            "seed": self.seed,
            "hyperparams": None if self.hyperparams is None else self.hyperparams.to_dict(),
            "transforms": self.transforms,
            "transform_applied": self.transform_applied,
            "adjusted": self.adjusted,
            "selected": self.selected,
            "passed": self.passed,
            "n_rows": self.n_rows,
            "error": self.error,
        }


@dataclass(frozen=True)
class TunerResult:
    params: dict[str, Any]
    config_hash: str
    pseudo_pop: PseudoPopulation
    adjusted_corr_results: BalanceReport
    original_corr_results: BalanceReport
    passed_covar_test: bool
    best_attempt: int
    best_gps_used_params: dict[str, Any]
    attempts: tuple[AttemptRecord, ...]
    gps_model: GpsModel
    original_data: Dataset | None = None

    def to_summary(self) -> dict[str, Any]:
        return {
            "schema_version": "1",
            "params": self.params,
            "config_hash": self.config_hash,
            "passed_covar_test": self.passed_covar_test,
            "best_attempt": self.best_attempt,
            "n_attempts": len(self.attempts),
            "best_gps_used_params": self.best_gps_used_params,
            "n_rows": self.pseudo_pop.n_rows,
            "original_balance": self.original_corr_results.original.to_dict(),
            "adjusted_balance": self.adjusted_corr_results.adjusted.to_dict(),
        }


@dataclass
class _Attempt:
    record: AttemptRecord
    pseudo_pop: PseudoPopulation
    report: BalanceReport
    model: GpsModel


class PseudoPopTuner:
    """Runs the attempt loop for one configuration.

    The transform ledger maps covariate name to the ordered list of transformer names
    applied to it. It only grows: later attempts inherit every earlier transform.
    """

    def __init__(self, cfg: TunerConfig, gps_model: GpsModel | None = None) -> None:
        self.cfg = cfg
        self.gps_model = gps_model
        self.ledger: dict[str, list[Transformer]] = {}

    def _transforms(self) -> dict[str, tuple[ColumnTransform, ...]]:
        return {name: tuple(resolve_transformer(t) for t in ts) for name, ts in self.ledger.items()}

    def _ledger_names(self) -> dict[str, list[str]]:
        return {name: [transformer_name(t) for t in ts] for name, ts in sorted(self.ledger.items())}

    def _construct(self, ds: Dataset, hp: HyperParams | None, seed: int) -> tuple[PseudoPopulation, GpsModel]:
        cfg = self.cfg
        if self.gps_model is not None:
            gps_est = gps_estimate_from_model(self.gps_model, ds, cfg.nthread)
        else:
            assert hp is not None
            gps_est = estimate_gps(
                ds, cfg.gps_density, cfg.learner_spec(hp), seed, cfg.nthread, transforms=self._transforms()
            )
        trimmed = trim_by_gps_quantiles(ds, gps_est.gps, cfg.gps_trim_qtls)
        if trimmed.n_rows != ds.n_rows:
            gps_est = gps_est.restrict(trimmed.ids)
        if cfg.ci_appr == "matching":
            assert cfg.match_cfg is not None
            pp = generate_matched_pseudopop(trimmed, gps_est, cfg.match_cfg, cfg.nthread)
        else:
            pp = generate_weighted_pseudopop(trimmed, gps_est, cfg.weight_cfg)
        return pp, gps_est.model

    def _next_transform(self, report: BalanceReport, ds: Dataset, attempt: int) -> dict[str, str] | None:
        numeric = {c.name for c in ds.covariates if c.kind == "numeric"}
        ranked = sorted(
            (name for name in report.names if name in numeric),
            key=lambda name: (-report.adjusted_ac[report.names.index(name)], report.names.index(name)),
        )
        if not ranked:
            logger.debug("no numeric covariate available for transformation")
            return None
        target = ranked[0]
        transformer = self.cfg.transformers[(attempt - 1) % len(self.cfg.transformers)]
        self.ledger.setdefault(target, []).append(transformer)
        return {"covariate": target, "transformer": transformer_name(transformer)}

    def run(self, ds: Dataset) -> TunerResult:
        cfg = self.cfg
        if not ds.covariates:
            raise InsufficientData("pseudo-population construction needs at least one covariate")
        started = time.perf_counter()
        trimmed = trim_by_exposure_quantiles(ds, cfg.exposure_trim_qtls)
        n_attempts = 1 if self.gps_model is not None else cfg.max_attempt

        best: _Attempt | None = None
        records: list[AttemptRecord] = []
        for a in range(1, n_attempts + 1):
            seed = cfg.rng_seed + a
            hp = None
            transforms = self._ledger_names()
            try:
                if self.gps_model is None:
                    hp = sample_hyperparams(cfg.hyperparam_grid, np.random.default_rng(seed))
                pp, model = self._construct(trimmed, hp, seed)
                # original ACs use the rows of this pseudo-population with uniform weights
                report = balance_report(pp, cfg.covar_bl_trs, cfg.covar_bl_trs_type)
            except CausalGPSError as e:
                logger.warning("attempt %d/%d failed: %s", a, n_attempts, e)
                records.append(AttemptRecord(a, seed, hp, transforms, error=f"{type(e).__name__}: {e}"))
                continue

            applied = None
            if not report.passed and cfg.use_cov_transform and a < n_attempts:
                applied = self._next_transform(report, trimmed, a)
            record = AttemptRecord(
                attempt=a,
                seed=seed,
                hyperparams=hp,
                transforms=transforms,
                transform_applied=applied,
                adjusted=report.adjusted.to_dict(),
                selected=report.selected,
                passed=report.passed,
                n_rows=pp.n_rows,
            )
            records.append(record)
            logger.info(
                "attempt %d/%d: %s AC mean=%.4f median=%.4f max=%.4f (threshold %s < %g): %s",
                a,
                n_attempts,
                cfg.ci_appr,
                report.adjusted.mean_ac,
                report.adjusted.median_ac,
                report.adjusted.max_ac,
                cfg.covar_bl_trs_type,
                cfg.covar_bl_trs,
                "passed" if report.passed else "failed",
            )
            if best is None or report.selected < best.report.selected:
                best = _Attempt(record, pp, report, model)
            if report.passed:
                break

        if best is None:
            raise AllAttemptsFailedConstruction(
                f"all {n_attempts} attempts failed; last error: {records[-1].error}"
            )
        logger.debug("tuner finished %d attempts in %.2fs", len(records), time.perf_counter() - started)

        params = cfg.to_params()
        digest = config_hash(params)
        pp = PseudoPopulation(
            best.pseudo_pop.data,
            best.pseudo_pop.weights,
            best.pseudo_pop.approach,
            {**best.pseudo_pop.provenance, "config_hash": digest, "attempt": best.record.attempt},
        )
        best_params: dict[str, Any] = {
            "attempt": best.record.attempt,
            "seed": best.record.seed,
            "hyperparams": None if best.record.hyperparams is None else best.record.hyperparams.to_dict(),
            "learner": cfg.learner_spec(best.record.hyperparams or HyperParams()).describe()
            if self.gps_model is None
            else "precomputed",
            "transforms": best.record.transforms,
        }
        return TunerResult(
            params=params,
            config_hash=digest,
            pseudo_pop=pp,
            adjusted_corr_results=best.report,
            original_corr_results=replace(
                best.report, adjusted_ac=best.report.original_ac, adjusted=best.report.original,
                passed=check_balance(best.report.original, cfg.covar_bl_trs, cfg.covar_bl_trs_type),
            ),
            passed_covar_test=best.report.passed,
            best_attempt=best.record.attempt,
            best_gps_used_params=best_params,
            attempts=tuple(records),
            gps_model=best.model,
            original_data=ds if cfg.include_original_data else None,
        )


def generate_pseudo_pop(ds: Dataset, cfg: TunerConfig, gps_model: GpsModel | None = None) -> TunerResult:
    return PseudoPopTuner(cfg, gps_model).run(ds)


@dataclass(frozen=True)
class CaliperSweep:
    deltas: tuple[float, ...]
    results: tuple[TunerResult | None, ...]
    errors: tuple[str | None, ...]
    best_index: int

    @property
    def best(self) -> TunerResult:
        result = self.results[self.best_index]
        assert result is not None
        return result


def delta_grid(start: float, end: float, step: float) -> tuple[float, ...]:
    if not (step > 0 and 0 < start <= end):
        raise ConfigError(f"caliper grid needs 0 < start <= end and step > 0, got {start},{end},{step}")
    count = int(math.floor((end - start) / step + 1e-9)) + 1
    return tuple(round(start + k * step, 12) for k in range(count))


def sweep_delta_n(ds: Dataset, cfg: TunerConfig, deltas: Sequence[float], gps_model: GpsModel | None = None) -> CaliperSweep:
    """Run the matching tuner once per caliper and pick the best-balanced one.

    Ties go to the smaller caliper. Calipers whose run fails are recorded and skipped.
    """
    if cfg.ci_appr != "matching" or cfg.match_cfg is None:
        raise ConfigError("caliper sweep requires the matching approach")
    ordered = tuple(sorted(float(d) for d in deltas))
    if not ordered:
        raise ConfigError("caliper sweep needs at least one delta_n")
    results: list[TunerResult | None] = []
    errors: list[str | None] = []
    for delta in ordered:
        match_cfg = MatchConfig(delta, cfg.match_cfg.scale, cfg.match_cfg.dist_measure, cfg.match_cfg.bin_seq)
        run_cfg = replace(cfg, match_cfg=match_cfg)
        try:
            results.append(generate_pseudo_pop(ds, run_cfg, gps_model))
            errors.append(None)
        except CausalGPSError as e:
            logger.warning("caliper %g failed: %s", delta, e)
            results.append(None)
            errors.append(f"{type(e).__name__}: {e}")

    scored = [(r.adjusted_corr_results.selected, i) for i, r in enumerate(results) if r is not None]
    if not scored:
        raise AllAttemptsFailedConstruction(f"every caliper in {list(ordered)} failed")
    best_score, best_index = min(scored)
    logger.info("best caliper %g (selected AC %.4f)", ordered[best_index], best_score)
    return CaliperSweep(ordered, tuple(results), tuple(errors), best_index)
