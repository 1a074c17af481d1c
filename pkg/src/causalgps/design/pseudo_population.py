from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import pandas as pd

from ..data.dataset import CovariateKind, Dataset
from ..errors import ConfigError, InputError, MissingColumn, SchemaMismatch

Approach = Literal["matching", "weighting"]

WEIGHT_COLUMNS: dict[str, Approach] = {
    "counter_weight": "matching",
    "stabilized_weight": "weighting",
}


@dataclass(frozen=True)
class PseudoPopulation:
    """Rows of the (trimmed) source data plus one weight per row.

    Matching weights are donor-selection counts; weighting weights are capped
    stabilized inverse-GPS ratios. Rows with weight 0 are kept.
    """

    data: Dataset
    weights: np.ndarray
    approach: Approach
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.approach not in ("matching", "weighting"):
            raise ConfigError(f"unknown approach {self.approach!r}")
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.shape != (self.data.n_rows,):
            raise SchemaMismatch("weights are not aligned with the pseudo-population rows")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("pseudo-population weights must be finite and non-negative")
        if self.approach == "matching" and np.any(w != np.floor(w)):
            raise InputError("matching counter weights must be integers")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def weight_column(self) -> str:
        return "counter_weight" if self.approach == "matching" else "stabilized_weight"

    @property
    def n_rows(self) -> int:
        return self.data.n_rows

    @property
    def ids(self) -> np.ndarray:
        return self.data.ids

    def positive(self) -> PseudoPopulation:
        """Rows with strictly positive weight."""
        keep = self.weights > 0
        return PseudoPopulation(self.data.subset(keep), self.weights[keep], self.approach, self.provenance)

    def take(self, idx: np.ndarray) -> PseudoPopulation:
        idx = np.asarray(idx)
        return PseudoPopulation(self.data.take(idx), self.weights[idx], self.approach, self.provenance)

    def to_frame(self) -> pd.DataFrame:
        df = self.data.to_frame()
        if self.approach == "matching":
            df[self.weight_column] = self.weights.astype(np.int64)
        else:
            df[self.weight_column] = self.weights
        return df

    @classmethod
    def from_frame(
        cls,
        df: pd.DataFrame,
        exposure_col: str,
        covar_cols: Mapping[str, CovariateKind] | Sequence[str],
        outcome_col: str | None = None,
        source: str | None = None,
    ) -> PseudoPopulation:
        present = [col for col in WEIGHT_COLUMNS if col in df.columns]
        if len(present) != 1:
            raise MissingColumn("counter_weight|stabilized_weight", source)
        weight_col = present[0]
        ds = Dataset.from_frame(df, exposure_col, covar_cols, outcome_col, id_col="id", source=source)
        weights = pd.to_numeric(df[weight_col], errors="coerce").to_numpy(dtype=np.float64)
        return cls(ds, weights, WEIGHT_COLUMNS[weight_col])
