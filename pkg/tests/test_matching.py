from __future__ import annotations

import logging

import numpy as np
import pytest

from conftest import identity_gps_model, one_covariate_dataset

from causalgps.data.dataset import Dataset
from causalgps.design.matching import (
    MatchConfig,
    Standardizer,
    default_bin_seq,
    generate_matched_pseudopop,
    match_at_level,
)
from causalgps.errors import ConfigError, DegenerateStandardizer, EmptyGrid
from causalgps.models.gps import GpsModel, MarginalDensity, estimate_gps, gps_estimate_from_model
from causalgps.models.learners import LearnerSpec, LinearModel


def _toy(n: int = 40, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    return one_covariate_dataset(x, x + rng.standard_normal(n))


def test_default_bin_seq() -> None:
    assert default_bin_seq(0.0, 10.0, 2.0).tolist() == [1.0, 3.0, 5.0, 7.0, 9.0]
    assert default_bin_seq(0.0, 1.0, 2.0).tolist() == [1.0]
    with pytest.raises(EmptyGrid):
        default_bin_seq(0.0, 0.5, 2.0)


def test_match_config_validation() -> None:
    with pytest.raises(ConfigError):
        MatchConfig(delta_n=0.0)
    with pytest.raises(ConfigError):
        MatchConfig(delta_n=1.0, scale=1.5)
    with pytest.raises(ConfigError):
        MatchConfig(delta_n=1.0, dist_measure="l2")  # type: ignore[arg-type]
    with pytest.raises(EmptyGrid):
        MatchConfig(delta_n=1.0, bin_seq=())


def test_standardizer_clamps() -> None:
    std = Standardizer(0.0, 2.0, 0.1, 0.5)
    assert std.exposure(np.array([-1.0, 1.0, 3.0])).tolist() == [0.0, 0.5, 1.0]
    assert float(std.gps(0.3)) == pytest.approx(0.5)
    with pytest.raises(DegenerateStandardizer):
        Standardizer(1.0, 1.0, 0.0, 1.0)


def test_single_row_matches_itself() -> None:
    ds = one_covariate_dataset(np.array([0.2]), np.array([0.7]))
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    cfg = MatchConfig(delta_n=1.0, bin_seq=(0.7,))
    pp = generate_matched_pseudopop(ds, est, cfg, standardizer=Standardizer(0.0, 1.0, 0.0, 1.0))
    assert pp.weights.tolist() == [1.0]


def test_empty_caliper_gives_zero_counts() -> None:
    ds = _toy()
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    std = Standardizer.from_data(ds.exposure, est.gps)
    counts = match_at_level(100.0, ds, est, MatchConfig(delta_n=0.5), std)
    assert counts.sum() == 0


def test_donors_come_from_inside_the_caliper() -> None:
    ds = _toy(60, seed=3)
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    std = Standardizer.from_data(ds.exposure, est.gps)
    for scale in (0.0, 0.5, 1.0):
        counts = match_at_level(0.0, ds, est, MatchConfig(delta_n=1.0, scale=scale), std)
        assert counts.sum() == ds.n_rows
        assert np.all(np.abs(ds.exposure[counts > 0]) <= 0.5)


def test_scale_zero_picks_exposure_nearest_donor() -> None:
    ds = _toy(50, seed=5)
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    std = Standardizer.from_data(ds.exposure, est.gps)
    counts = match_at_level(0.1, ds, est, MatchConfig(delta_n=1.0, scale=0.0), std)
    inside = np.flatnonzero(np.abs(ds.exposure - 0.1) <= 0.5)
    nearest = inside[np.argmin(np.abs(std.exposure(ds.exposure[inside]) - std.exposure(0.1)))]
    assert np.flatnonzero(counts).tolist() == [nearest]
    assert counts[nearest] == ds.n_rows


def test_mass_is_conserved_and_skipped_bins_warn(caplog: pytest.LogCaptureFixture) -> None:
    ds = _toy(40, seed=1)
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    cfg = MatchConfig(delta_n=1.0, bin_seq=(0.0, 0.5, 50.0))
    with caplog.at_level(logging.WARNING, logger="causalgps"):
        pp = generate_matched_pseudopop(ds, est, cfg)
    assert pp.provenance["skipped_bins"] == [50.0]
    assert pp.weights.sum() == ds.n_rows * 2
    assert any("bin skipped" in r.getMessage() for r in caplog.records)


def test_all_bins_empty_raises() -> None:
    ds = _toy()
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    with pytest.raises(EmptyGrid):
        generate_matched_pseudopop(ds, est, MatchConfig(delta_n=0.1, bin_seq=(99.0,)))


def test_matching_on_simulated_data(sim_small: Dataset) -> None:
    est = estimate_gps(sim_small, "normal", LearnerSpec(kind="linear"), rng_seed=1)
    sd = float(np.std(sim_small.exposure))
    cfg = MatchConfig(delta_n=0.4 * sd)
    serial = generate_matched_pseudopop(sim_small, est, cfg, nthread=1)
    threaded = generate_matched_pseudopop(sim_small, est, cfg, nthread=4)
    n_bins = serial.provenance["n_bins"] - len(serial.provenance["skipped_bins"])
    assert serial.weights.sum() == sim_small.n_rows * n_bins
    assert np.array_equal(serial.weights, threaded.weights)
    assert serial.to_frame()["counter_weight"].dtype == np.int64


def _scaled_gps_model(ds: Dataset, c: float) -> GpsModel:
    return GpsModel(
        density_kind="normal",
        mean_model=LinearModel(intercept=0.0, coef=np.array([c]), n_features=1),
        schema=ds.schema(),
        feature_names=("x",),
        marginal=MarginalDensity("normal", mean=0.0, sd=c),
        sd_global=c,
    )


def test_gps_only_matching_ignores_exposure_units() -> None:
    rng = np.random.default_rng(41)
    x = rng.standard_normal(80)
    e = x + rng.standard_normal(80)
    levels = (-1.0, -0.25, 0.5, 1.25)
    ds = one_covariate_dataset(x, e)
    base = generate_matched_pseudopop(
        ds, gps_estimate_from_model(_scaled_gps_model(ds, 1.0), ds), MatchConfig(0.75, 1.0, bin_seq=levels)
    )
    # doubling is exact in floating point, so every comparison is preserved
    wide = one_covariate_dataset(x, 2.0 * e)
    doubled = generate_matched_pseudopop(
        wide,
        gps_estimate_from_model(_scaled_gps_model(wide, 2.0), wide),
        MatchConfig(1.5, 1.0, bin_seq=tuple(2.0 * v for v in levels)),
    )
    assert np.array_equal(base.weights, doubled.weights)


def test_wider_caliper_never_loses_a_bin() -> None:
    rng = np.random.default_rng(42)
    x = rng.standard_normal(30)
    ds = one_covariate_dataset(x, x + rng.standard_normal(30))
    est = gps_estimate_from_model(identity_gps_model(ds), ds)
    levels = tuple(np.linspace(-3.0, 3.0, 25))
    matched: list[set[float]] = []
    for delta in (0.05, 0.1, 0.2, 0.4, 0.8, 1.6):
        try:
            pp = generate_matched_pseudopop(ds, est, MatchConfig(delta, 1.0, bin_seq=levels))
        except EmptyGrid:
            matched.append(set())
            continue
        matched.append(set(levels) - set(pp.provenance["skipped_bins"]))
    assert all(a <= b for a, b in zip(matched, matched[1:]))
    assert matched[-1]
