from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd

from ..errors import (
    AllRowsTrimmed,
    ConfigError,
    DuplicateId,
    EmptyInput,
    InputError,
    MalformedFile,
    MissingColumn,
    ParseError,
    SchemaMismatch,
)

logger = logging.getLogger(__name__)

CovariateKind = Literal["numeric", "categorical"]
ColumnTransform = Callable[[np.ndarray], np.ndarray]
INT64_MAX = int(np.iinfo(np.int64).max)


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class QuantilePair:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ConfigError(f"quantile pair must satisfy 0 <= lo < hi <= 1, got ({self.lo}, {self.hi})")

    @classmethod
    def parse(cls, text: str) -> QuantilePair:
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"expected 'lo,hi', got {text!r}")
        try:
            return cls(float(parts[0]), float(parts[1]))
        except ValueError as e:
            raise ConfigError(f"expected 'lo,hi', got {text!r}") from e

    def as_list(self) -> list[float]:
        return [self.lo, self.hi]


@dataclass(frozen=True)
class Covariate:
    """One covariate column.

    Numeric columns store float64 values. Categorical columns store integer codes into
    ``levels`` (levels sorted, the first one is the reference level).
    """

    name: str
    kind: CovariateKind
    values: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "categorical":
            if len(self.levels) < 1:
                raise InputError(f"categorical covariate '{self.name}' has no levels")
            object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.int64)))
        else:
            object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64)))

    def take(self, idx: np.ndarray) -> Covariate:
        return Covariate(self.name, self.kind, self.values[idx], self.levels)

    def labels(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=object)[self.values]

    def level_indicators(self, drop_reference: bool) -> list[tuple[str, np.ndarray]]:
        start = 1 if drop_reference else 0
        return [
            (f"{self.name}[{level}]", (self.values == code).astype(np.float64))
            for code, level in enumerate(self.levels)
            if code >= start
        ]


@dataclass(frozen=True)
class Dataset:
    ids: np.ndarray
    exposure: np.ndarray
    covariates: tuple[Covariate, ...]
    outcome: np.ndarray | None = None
    exposure_name: str = "exposure"
    outcome_name: str = "outcome"

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64)
        exposure = np.asarray(self.exposure, dtype=np.float64)
        n = exposure.shape[0]
        if n < 1:
            raise EmptyInput("dataset must contain at least one row")
        if ids.shape != (n,):
            raise InputError("ids and exposure must have equal length")
        if np.any(ids < 0):
            raise InputError("ids must be non-negative")
        uniq, counts = np.unique(ids, return_counts=True)
        if np.any(counts > 1):
            raise DuplicateId(int(uniq[np.argmax(counts > 1)]))
        if not np.all(np.isfinite(exposure)):
            raise InputError("exposure values must be finite")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise InputError(f"covariate names must be unique: {names}")
        for cov in self.covariates:
            if cov.values.shape != (n,):
                raise InputError(f"covariate '{cov.name}' length differs from exposure")
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "exposure", _frozen(exposure))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.outcome is not None:
            outcome = np.asarray(self.outcome, dtype=np.float64)
            if outcome.shape != (n,):
                raise InputError("outcome length differs from exposure")
            object.__setattr__(self, "outcome", _frozen(outcome))

    @property
    def n_rows(self) -> int:
        return int(self.exposure.shape[0])

    @property
    def covariate_names(self) -> list[str]:
        return [c.name for c in self.covariates]

    def covariate(self, name: str) -> Covariate:
        for cov in self.covariates:
            if cov.name == name:
                return cov
        raise MissingColumn(name)

    def schema(self) -> tuple[tuple[str, str, tuple[str, ...]], ...]:
        return tuple((c.name, c.kind, c.levels) for c in self.covariates)

    def take(self, idx: np.ndarray) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(
            ids=self.ids[idx],
            exposure=self.exposure[idx],
            covariates=tuple(c.take(idx) for c in self.covariates),
            outcome=None if self.outcome is None else self.outcome[idx],
            exposure_name=self.exposure_name,
            outcome_name=self.outcome_name,
        )

    def subset(self, mask: np.ndarray) -> Dataset:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise AllRowsTrimmed("no rows left after trimming")
        return self.take(np.flatnonzero(mask))

    def restrict_to(self, ids: np.ndarray) -> Dataset:
        """Rows whose id is in ``ids``, in this dataset's row order."""
        return self.subset(np.isin(self.ids, ids))

    def feature_matrix(
        self, transforms: Mapping[str, Sequence[ColumnTransform]] | None = None
    ) -> tuple[np.ndarray, list[str]]:
        """Learner design matrix.

        Numeric covariates enter as-is, or as the composition of their transforms in
        order. Categorical covariates are one-hot encoded with the reference level dropped.
        """
        transforms = transforms or {}
        columns: list[np.ndarray] = []
        names: list[str] = []
        for cov in self.covariates:
            if cov.kind == "categorical":
                for name, col in cov.level_indicators(drop_reference=True):
                    names.append(name)
                    columns.append(col)
                continue
            col = cov.values
            for fn in transforms.get(cov.name, ()):
                col = np.asarray(fn(col), dtype=np.float64)
            names.append(cov.name)
            columns.append(col)
        if not columns:
            return np.empty((self.n_rows, 0)), names
        return np.column_stack(columns), names

    def to_frame(self) -> pd.DataFrame:
        data: dict[str, np.ndarray] = {"id": self.ids, self.exposure_name: self.exposure}
        for cov in self.covariates:
            data[cov.name] = cov.labels() if cov.kind == "categorical" else cov.values
        if self.outcome is not None:
            data[self.outcome_name] = self.outcome
        return pd.DataFrame(data)

    @classmethod
    def from_frame(
        cls,
        df: pd.DataFrame,
        exposure_col: str,
        covar_cols: Mapping[str, CovariateKind] | Sequence[str],
        outcome_col: str | None = None,
        id_col: str | None = None,
        source: str | None = None,
    ) -> Dataset:
        if not isinstance(covar_cols, Mapping):
            covar_cols = {name: "numeric" for name in covar_cols}
        required = [exposure_col, *covar_cols]
        if outcome_col:
            required.append(outcome_col)
        if id_col:
            required.append(id_col)
        for col in required:
            if col not in df.columns:
                raise MissingColumn(col, source)

        if id_col:
            ids = _parse_ids(df[id_col], id_col)
        else:
            ids = np.arange(len(df), dtype=np.int64)

        covariates: list[Covariate] = []
        for name, kind in covar_cols.items():
            if kind == "categorical":
                labels = df[name].astype(str).str.strip()
                empty = (labels == "").to_numpy()
                if empty.any():
                    raise ParseError(int(np.argmax(empty)) + 1, name, "")
                levels = tuple(sorted(labels.unique()))
                codes = pd.Categorical(labels, categories=levels).codes
                covariates.append(Covariate(name, "categorical", codes, levels))
            elif kind == "numeric":
                covariates.append(Covariate(name, "numeric", _parse_numeric(df[name], name)))
            else:
                raise ConfigError(f"unknown covariate kind {kind!r} for '{name}'")

        return cls(
            ids=ids,
            exposure=_parse_numeric(df[exposure_col], exposure_col),
            covariates=tuple(covariates),
            outcome=_parse_numeric(df[outcome_col], outcome_col) if outcome_col else None,
            exposure_name=exposure_col,
            outcome_name=outcome_col or "outcome",
        )


def _parse_numeric(series: pd.Series, column: str) -> np.ndarray:
    values = pd.to_numeric(series, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argmax(bad))
        raise ParseError(row + 1, column, str(series.iloc[row]))
    return values


def _parse_ids(series: pd.Series, column: str) -> np.ndarray:
    """Non-negative integer ids parsed digit-exactly, without a float round trip."""
    text = series.astype(str).str.strip()
    digits = text.str.fullmatch(r"\+?\d+").to_numpy(dtype=bool)
    too_long = text.str.lstrip("+").str.lstrip("0").str.len().to_numpy() > 19
    bad = ~digits | too_long
    if not bad.any():
        values = [int(v) for v in text]
        bad = np.array([v > INT64_MAX for v in values], dtype=bool)
        if not bad.any():
            return np.array(values, dtype=np.int64)
    row = int(np.argmax(bad))
    raise ParseError(row + 1, column, str(series.iloc[row]))


def read_csv_frame(path: str | Path, **kwargs: Any) -> pd.DataFrame:
    """``pd.read_csv`` over a UTF-8 file with read failures mapped onto input errors."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    try:
        return pd.read_csv(path, encoding="utf-8", **kwargs)
    except UnicodeDecodeError as e:
        raise MalformedFile(str(path), f"not valid UTF-8 (byte {e.start})") from e
    except pd.errors.EmptyDataError as e:
        raise EmptyInput(f"input file is empty: {path}") from e
    except pd.errors.ParserError as e:
        reason = " ".join(str(e).split())
        raise MalformedFile(str(path), reason) from e


def parse_covariate_spec(text: str) -> dict[str, CovariateKind]:
    """Parse ``"c1,c2,region:categorical"`` into an ordered name -> kind mapping."""
    spec: dict[str, CovariateKind] = {}
    for item in (part.strip() for part in text.split(",")):
        if not item:
            continue
        name, _, kind = item.partition(":")
        kind = kind or "numeric"
        if kind not in ("numeric", "categorical"):
            raise ConfigError(f"unknown covariate kind {kind!r} for '{name}'")
        spec[name] = kind  # type: ignore[assignment]
    if not spec:
        raise ConfigError("at least one covariate is required")
    return spec


def load_csv(
    path: str | Path,
    exposure_col: str,
    covar_cols: Mapping[str, CovariateKind] | Sequence[str],
    outcome_col: str | None = None,
    id_col: str | None = None,
) -> Dataset:
    """Read a header-first UTF-8 CSV into a Dataset.

    Empty cells are rejected. ParseError rows are 1-based data rows (header excluded).
    Without ``id_col`` ids are 0..N-1 in file order.
    """
    path = Path(path)
    df = read_csv_frame(path, dtype=str, keep_default_na=False)
    ds = Dataset.from_frame(df, exposure_col, covar_cols, outcome_col, id_col, source=str(path))
    logger.debug("loaded %d rows from %s", ds.n_rows, path)
    return ds


def quantile(values: np.ndarray | Sequence[float], p: float) -> float:
    """Linear-interpolation quantile of the order statistics (h = (n-1)p + 1)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("quantile of an empty vector")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"probability must lie in [0, 1], got {p}")
    return float(np.quantile(arr, p))


def quantile_mask(values: np.ndarray, q: QuantilePair) -> np.ndarray:
    lo = quantile(values, q.lo)
    hi = quantile(values, q.hi)
    return (values >= lo) & (values <= hi)


def trim_by_exposure_quantiles(ds: Dataset, q: QuantilePair) -> Dataset:
    mask = quantile_mask(ds.exposure, q)
    if not mask.any():
        raise AllRowsTrimmed(f"exposure trimming at {q.as_list()} removed every row")
    logger.debug("exposure trim %s kept %d of %d rows", q.as_list(), int(mask.sum()), ds.n_rows)
    return ds.subset(mask)


def trim_by_gps_quantiles(ds: Dataset, gps: np.ndarray, q: QuantilePair) -> Dataset:
    gps = np.asarray(gps, dtype=np.float64)
    if gps.shape != (ds.n_rows,):
        raise SchemaMismatch("gps vector is not aligned with the dataset")
    mask = quantile_mask(gps, q)
    if not mask.any():
        raise AllRowsTrimmed(f"gps trimming at {q.as_list()} removed every row")
    logger.debug("gps trim %s kept %d of %d rows", q.as_list(), int(mask.sum()), ds.n_rows)
    return ds.subset(mask)
