"""End-to-end checks against simulated data with a known exposure-response function."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import identity_gps_model

from causalgps.cli import run_subcommand
from causalgps.data.dataset import Covariate, Dataset, quantile
from causalgps.data.simulate import SimConfig, naive_slope, simulate_dataset, true_erf
from causalgps.design.matching import MatchConfig, Standardizer, bin_grid, generate_matched_pseudopop
from causalgps.design.tuner import TunerConfig, generate_pseudo_pop
from causalgps.errors import EmptyGrid
from causalgps.models.gps import evaluate_gps_at, gps_estimate_from_model
from causalgps.outcome.erf import BandwidthGrid, estimate_npmetric_erf, estimate_pmetric_erf

LINEAR = TunerConfig(sl_lib=("linear",), max_attempt=1, rng_seed=17)


@pytest.fixture(scope="module")
def sim_linear() -> Dataset:
    ds, _ = simulate_dataset(SimConfig(n=5000, erf_shape="linear", seed=2024))
    return ds


def test_weighting_balances_covariates(sim_linear: Dataset) -> None:
    result = generate_pseudo_pop(sim_linear, LINEAR)
    assert result.original_corr_results.original.max_ac > 0.2
    adjusted = result.adjusted_corr_results.adjusted
    assert adjusted.mean_ac < 0.1
    assert adjusted.max_ac < 0.15


def test_matching_passes_within_attempt_budget(sim_linear: Dataset) -> None:
    delta = 0.4 * float(np.std(sim_linear.exposure))
    cfg = TunerConfig(
        ci_appr="matching",
        match_cfg=MatchConfig(delta_n=delta, scale=1.0),
        sl_lib=("linear",),
        use_cov_transform=True,
        max_attempt=10,
        covar_bl_trs=0.1,
        covar_bl_trs_type="maximal",
        rng_seed=17,
    )
    result = generate_pseudo_pop(sim_linear, cfg)
    assert result.passed_covar_test
    assert len(result.attempts) <= 10

    pp = result.pseudo_pop
    used = pp.provenance["n_bins"] - len(pp.provenance["skipped_bins"])
    assert pp.weights.sum() == pp.n_rows * used


def test_naive_slope_is_confounded(sim_linear: Dataset) -> None:
    assert sim_linear.outcome is not None
    slope = np.polyfit(sim_linear.exposure, sim_linear.outcome, 1)[0]
    assert slope == pytest.approx(naive_slope(), abs=0.03)
    assert naive_slope() == pytest.approx(0.58101, abs=1e-5)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_pmetric_recovers_causal_slope(seed: int) -> None:
    ds, truth = simulate_dataset(SimConfig(n=5000, seed=seed))
    result = generate_pseudo_pop(ds, LINEAR)
    fit = estimate_pmetric_erf(result.pseudo_pop, "gaussian")
    assert fit.slope == pytest.approx(truth["erf"]["slope"], abs=0.05)


def test_npmetric_recovers_curved_erf() -> None:
    ds, _ = simulate_dataset(SimConfig(n=5000, erf_shape="curved", seed=2024))
    pp = generate_pseudo_pop(ds, LINEAR).pseudo_pop
    assert pp.data.outcome is not None
    w_vals = np.linspace(quantile(pp.data.exposure, 0.1), quantile(pp.data.exposure, 0.9), 21)
    erf = estimate_npmetric_erf(pp.data.outcome, pp.data.exposure, pp.weights, BandwidthGrid(0.2, 1.0, 0.1), w_vals)
    truth = np.asarray(true_erf("curved", w_vals))
    assert np.max(np.abs(erf.estimates - truth)) < 0.15


# -- brute-force matching oracle ----------------------------------------------------------


def _random_instance(rng: np.random.Generator) -> tuple[Dataset, MatchConfig]:
    n = int(rng.integers(5, 51))
    # rounding to one decimal produces tied exposures and GPS values
    x = np.round(rng.normal(size=n), 1)
    exposure = np.round(x + rng.normal(size=n), 1)
    if np.ptp(exposure) == 0:
        exposure[0] += 1.0
    ids = rng.permutation(np.arange(100, 100 + 3 * n))[:n]
    ds = Dataset(ids=ids, exposure=exposure, covariates=(Covariate("x", "numeric", x),))
    levels = rng.uniform(exposure.min() - 0.5, exposure.max() + 0.5, size=int(rng.integers(1, 11)))
    cfg = MatchConfig(
        delta_n=float(rng.uniform(0.1, 2.0)),
        scale=float(rng.choice([0.0, 0.5, 1.0])),
        bin_seq=tuple(float(v) for v in levels),
    )
    return ds, cfg


def _brute_force(ds: Dataset, cfg: MatchConfig) -> np.ndarray | None:
    """Counter weights by exhaustive search; None when every level has an empty caliper."""
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    std = Standardizer.from_data(ds.exposure, est.gps)
    donor_p = std.gps(est.gps)
    donor_e = std.exposure(ds.exposure)
    counts = np.zeros(ds.n_rows, dtype=np.int64)
    matched_any = False
    for w_star in bin_grid(ds, cfg):
        candidates = [i for i in range(ds.n_rows) if abs(ds.exposure[i] - w_star) <= cfg.delta_n / 2.0]
        if not candidates:
            continue
        matched_any = True
        p_star = std.gps(evaluate_gps_at(est.model, float(w_star), ds))
        w_std = float(std.exposure(float(w_star)))
        for j in range(ds.n_rows):
            best, best_key = -1, (np.inf, np.inf)
            for i in candidates:
                dist = cfg.scale * abs(p_star[j] - donor_p[i]) + (1.0 - cfg.scale) * abs(w_std - donor_e[i])
                if (dist, ds.ids[i]) < best_key:
                    best, best_key = i, (dist, ds.ids[i])
            counts[best] += 1
    return counts if matched_any else None


def test_matching_equals_brute_force() -> None:
    rng = np.random.default_rng(5)
    for _ in range(100):
        ds, cfg = _random_instance(rng)
        est = gps_estimate_from_model(identity_gps_model(ds), ds)
        expected = _brute_force(ds, cfg)
        if expected is None:
            with pytest.raises(EmptyGrid):
                generate_matched_pseudopop(ds, est, cfg)
            continue
        pp = generate_matched_pseudopop(ds, est, cfg)
        assert np.array_equal(pp.weights.astype(np.int64), expected), (cfg, ds.n_rows)
        used = pp.provenance["n_bins"] - len(pp.provenance["skipped_bins"])
        assert pp.weights.sum() == ds.n_rows * used


# -- thread-count determinism through the command line -------------------------------------


def _run_pipeline(tmp_path: Path, data: Path, delta: float, nthread: int) -> dict[str, bytes]:
    out = tmp_path / f"threads{nthread}"
    threads = ["--nthread", str(nthread), "--seed", "9"]
    assert run_subcommand(
        [
            "pseudo-pop", "--input", str(data), "--covariates", "c1,c2,c3,c4,c5,c6", "--outcome", "outcome",
            "--ci-appr", "matching", "--delta-n", repr(delta), "--sl-lib", "linear,gbt", "--k-folds", "3",
            "--nrounds", "5:15", "--max-depth", "2,3", "--max-attempt", "2", "--out-dir", str(out), *threads,
        ]
    ) == 0
    assert run_subcommand(
        [
            "estimate-erf", "--input", str(out / "pseudo_pop.csv"), "--model", "npmetric", "--w-count", "11",
            "--bootstrap-b", "8", "--out-dir", str(out), *threads,
        ]
    ) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_outputs_do_not_depend_on_thread_count(tmp_path: Path) -> None:
    data = tmp_path / "data.csv"
    assert run_subcommand(
        ["simulate", "--n", "300", "--seed", "4", "--out", str(data), "--truth-out", str(tmp_path / "truth.json")]
    ) == 0
    delta = 0.4 * float(pd.read_csv(data)["exposure"].std(ddof=0))

    single = _run_pipeline(tmp_path, data, delta, 1)
    multi = _run_pipeline(tmp_path, data, delta, 4)
    assert set(single) == {
        "pseudo_pop.csv", "balance_report.csv", "attempts.jsonl", "summary.json", "summary.md", "erf.csv", "risks.csv",
    }
    for name, content in single.items():
        assert multi[name] == content, name
