from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..data.dataset import Dataset
from ..errors import ConfigError, SchemaMismatch
from ..models.gps import GpsEstimate
from .pseudo_population import PseudoPopulation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightConfig:
    """Upper cap on stabilized weights; ``math.inf`` disables capping."""

    cap: float = 10.0

    def __post_init__(self) -> None:
        if math.isnan(self.cap) or not self.cap > 0:
            raise ConfigError(f"weight cap must be positive, got {self.cap}")

    def to_dict(self) -> dict[str, float | None]:
        """JSON-safe form; an unbounded cap is written as null."""
        return {"cap": None if math.isinf(self.cap) else self.cap}


def stabilized_weights(gps_est: GpsEstimate, cfg: WeightConfig) -> np.ndarray:
    """w_i = min(f_E(e_i) / q(e_i, x_i), cap). No lower truncation, no renormalization."""
    raw = gps_est.marginal / gps_est.gps
    capped = int(np.count_nonzero(raw > cfg.cap))
    if capped:
        logger.debug("capped %d of %d stabilized weights at %g", capped, raw.size, cfg.cap)
    return np.minimum(raw, cfg.cap)


def generate_weighted_pseudopop(ds: Dataset, gps_est: GpsEstimate, cfg: WeightConfig) -> PseudoPopulation:
    if not gps_est.aligned_with(ds):
        raise SchemaMismatch("GPS estimate is not aligned with the dataset")
    weights = stabilized_weights(gps_est, cfg)
    return PseudoPopulation(ds, weights, "weighting", {"approach": "weighting", **cfg.to_dict()})
