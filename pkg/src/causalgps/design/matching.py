"""
Caliper matching on the standardized (exposure, GPS) plane.

For every exposure level w* of the bin grid, each recipient row j is matched to the donor
i, among rows whose exposure lies within delta/2 of w*, minimising

    scale * |p~(w*, x_j) - p~_i| + (1 - scale) * |w~* - e~_i|

where ~ denotes min-max standardization over the observed data. A donor's counter weight
is the number of times it was selected, summed over all bins.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..data.dataset import Dataset
from ..errors import ConfigError, DegenerateStandardizer, EmptyGrid, SchemaMismatch
from ..logging_setup import trace
from ..models.gps import GpsEstimate, conditional_density, predict_conditional_stats
from .pseudo_population import PseudoPopulation

logger = logging.getLogger(__name__)

DistMeasure = Literal["l1"]

# recipients x candidates evaluated per block in the general distance scan
_SCAN_BLOCK = 1 << 20


@dataclass(frozen=True)
class MatchConfig:
    delta_n: float
    scale: float = 1.0
    dist_measure: DistMeasure = "l1"
    bin_seq: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delta_n) and self.delta_n > 0):
            raise ConfigError(f"delta_n must be positive, got {self.delta_n}")
        if not 0.0 <= self.scale <= 1.0:
            raise ConfigError(f"scale must lie in [0, 1], got {self.scale}")
        if self.dist_measure != "l1":
            raise ConfigError(f"unsupported distance measure {self.dist_measure!r}; only 'l1' is available")
        if self.bin_seq is not None:
            seq = tuple(float(v) for v in self.bin_seq)
            if not seq:
                raise EmptyGrid("explicit bin_seq is empty")
            object.__setattr__(self, "bin_seq", seq)

    def to_dict(self) -> dict[str, object]:
        return {
            "delta_n": self.delta_n,
            "scale": self.scale,
            "dist_measure": self.dist_measure,
            "bin_seq": None if self.bin_seq is None else list(self.bin_seq),
        }


@dataclass(frozen=True)
class Standardizer:
    """Min-max maps of exposure and GPS onto [0, 1]; values outside the range clamp."""

    exposure_min: float
    exposure_max: float
    gps_min: float
    gps_max: float

    def __post_init__(self) -> None:
        if not self.exposure_max > self.exposure_min:
            raise DegenerateStandardizer("exposure range is zero")
        if not self.gps_max > self.gps_min:
            raise DegenerateStandardizer("GPS range is zero")

    @classmethod
    def from_data(cls, exposure: np.ndarray, gps: np.ndarray) -> Standardizer:
        return cls(
            exposure_min=float(np.min(exposure)),
            exposure_max=float(np.max(exposure)),
            gps_min=float(np.min(gps)),
            gps_max=float(np.max(gps)),
        )

    def exposure(self, e: float | np.ndarray) -> np.ndarray:
        scaled = (np.asarray(e, dtype=np.float64) - self.exposure_min) / (self.exposure_max - self.exposure_min)
        return np.clip(scaled, 0.0, 1.0)

    def gps(self, p: float | np.ndarray) -> np.ndarray:
        scaled = (np.asarray(p, dtype=np.float64) - self.gps_min) / (self.gps_max - self.gps_min)
        return np.clip(scaled, 0.0, 1.0)


def default_bin_seq(e_min: float, e_max: float, delta_n: float) -> np.ndarray:
    """Exposure levels e_min + delta/2, e_min + 3 delta/2, ... up to e_max."""
    if not delta_n > 0:
        raise ConfigError(f"delta_n must be positive, got {delta_n}")
    if e_min > e_max:
        raise ConfigError(f"e_min ({e_min}) exceeds e_max ({e_max})")
    start = e_min + delta_n / 2.0
    if start > e_max:
        raise EmptyGrid(f"no exposure level fits: {e_min} + {delta_n}/2 exceeds {e_max}")
    count = int(math.floor((e_max - start) / delta_n)) + 1
    grid = start + delta_n * np.arange(count, dtype=np.float64)
    return grid[grid <= e_max]


def _nearest_sorted(targets: np.ndarray, donor_vals: np.ndarray, donor_ids: np.ndarray) -> np.ndarray:
    """Position (into the donor arrays) of the nearest donor value for every target.

    Donors must be sorted by (value, id). Equal distances go to the smaller id.
    """
    n = donor_vals.shape[0]
    first_of_value = np.searchsorted(donor_vals, donor_vals, side="left")
    right = np.searchsorted(donor_vals, targets, side="left")
    has_right = right < n
    has_left = right > 0
    r = np.minimum(right, n - 1)
    left = first_of_value[np.maximum(right - 1, 0)]

    d_right = np.where(has_right, np.abs(targets - donor_vals[r]), np.inf)
    d_left = np.where(has_left, np.abs(targets - donor_vals[left]), np.inf)
    pick_left = (d_left < d_right) | ((d_left == d_right) & (donor_ids[left] < donor_ids[r]))
    return np.where(pick_left, left, r)


def _nearest_scan(
    p_star: np.ndarray,
    donor_p: np.ndarray,
    donor_e: np.ndarray,
    w_std: float,
    scale: float,
) -> np.ndarray:
    """Exact argmin over all donors per recipient; donors sorted by id so ties pick the smallest."""
    exposure_term = (1.0 - scale) * np.abs(w_std - donor_e)
    rows = max(1, _SCAN_BLOCK // donor_p.shape[0])
    picks = np.empty(p_star.shape[0], dtype=np.int64)
    for start in range(0, p_star.shape[0], rows):
        block = p_star[start:start + rows]
        dist = scale * np.abs(block[:, None] - donor_p[None, :]) + exposure_term[None, :]
        picks[start:start + rows] = np.argmin(dist, axis=1)
    return picks


def match_at_level(
    w_star: float,
    ds: Dataset,
    gps_est: GpsEstimate,
    cfg: MatchConfig,
    standardizer: Standardizer,
    conditional_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Donor-selection counts over the rows of ``ds`` for one exposure level.

    An empty caliper gives an all-zero vector. ``conditional_stats`` lets callers reuse
    the GPS model's per-row mean and scale across levels.
    """
    if not gps_est.aligned_with(ds):
        raise SchemaMismatch("GPS estimate is not aligned with the dataset")
    counts = np.zeros(ds.n_rows, dtype=np.int64)
    candidates = np.flatnonzero(np.abs(ds.exposure - w_star) <= cfg.delta_n / 2.0)
    if candidates.size == 0:
        return counts

    mean, sd = conditional_stats or predict_conditional_stats(gps_est.model, ds)
    p_star = standardizer.gps(conditional_density(gps_est.model, w_star, mean, sd))
    donor_p = standardizer.gps(gps_est.gps[candidates])
    donor_ids = ds.ids[candidates]

    if cfg.scale == 1.0:
        order = np.lexsort((donor_ids, donor_p))
        picks = _nearest_sorted(p_star, donor_p[order], donor_ids[order])
    else:
        order = np.argsort(donor_ids, kind="stable")
        donor_e = standardizer.exposure(ds.exposure[candidates])
        w_std = float(standardizer.exposure(w_star))
        picks = _nearest_scan(p_star, donor_p[order], donor_e[order], w_std, cfg.scale)

    np.add.at(counts, candidates[order][picks], 1)
    return counts


def bin_grid(ds: Dataset, cfg: MatchConfig) -> np.ndarray:
    if cfg.bin_seq is not None:
        return np.asarray(cfg.bin_seq, dtype=np.float64)
    return default_bin_seq(float(np.min(ds.exposure)), float(np.max(ds.exposure)), cfg.delta_n)


def generate_matched_pseudopop(
    ds: Dataset,
    gps_est: GpsEstimate,
    cfg: MatchConfig,
    nthread: int = 1,
    standardizer: Standardizer | None = None,
) -> PseudoPopulation:
    if not gps_est.aligned_with(ds):
        raise SchemaMismatch("GPS estimate is not aligned with the dataset")
    started = time.perf_counter()
    std = standardizer or Standardizer.from_data(ds.exposure, gps_est.gps)
    grid = bin_grid(ds, cfg)
    stats = predict_conditional_stats(gps_est.model, ds)

    def _level(w_star: float) -> np.ndarray:
        return match_at_level(float(w_star), ds, gps_est, cfg, std, stats)

    if nthread > 1 and grid.size > 1:
        with ThreadPoolExecutor(max_workers=nthread) as ex:
            per_bin = list(ex.map(_level, grid))
    else:
        per_bin = [_level(w) for w in grid]

    weights = np.zeros(ds.n_rows, dtype=np.int64)
    skipped: list[float] = []
    for w_star, counts in zip(grid, per_bin):
        if not counts.any():
            skipped.append(float(w_star))
            logger.warning("no donor within caliper %.6g of exposure level %.6g; bin skipped", cfg.delta_n, w_star)
            continue
        trace(logger, "bin %.6g: %d distinct donors", w_star, int(np.count_nonzero(counts)))
        weights += counts
    if len(skipped) == grid.size:
        raise EmptyGrid("no exposure level had a donor within the caliper")

    logger.debug(
        "matched %d rows over %d bins (%d skipped) in %.2fs",
        ds.n_rows,
        grid.size,
        len(skipped),
        time.perf_counter() - started,
    )
    provenance = {
        "approach": "matching",
        **cfg.to_dict(),
        "n_bins": int(grid.size),
        "skipped_bins": skipped,
    }
    return PseudoPopulation(ds, weights.astype(np.float64), "matching", provenance)
