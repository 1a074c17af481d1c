"""
File formats exchanged between pipeline stages.

Every writer is deterministic: no timestamps, fixed column order, floats written with
pandas' shortest round-trip representation.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from ..data.dataset import read_csv_frame
from ..design.balance import BalanceReport, BalanceSummary
from ..design.tuner import AttemptRecord, TunerResult
from ..errors import InputError, IoError, MalformedFile
from ..validation.schemas import validate_attempt_record, validate_tuner_summary


def _ensure_dir(p: Path) -> None:
    p.mkdir(parents=True, exist_ok=True)


def _write_text(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        _ensure_dir(path.parent)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path


def write_frame(df: pd.DataFrame, path: str | Path) -> Path:
    return _write_text(Path(path), df.to_csv(index=False, lineterminator="\n"))


def write_json(payload: Mapping[str, Any], path: str | Path) -> Path:
    return _write_text(Path(path), json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as e:
        raise MalformedFile(str(path), f"not valid UTF-8 (byte {e.start})") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{path} is not valid JSON: {e}") from e


def write_attempts_jsonl(records: Iterable[AttemptRecord], path: str | Path) -> Path:
    lines = []
    for record in records:
        payload = record.to_dict()
        validate_attempt_record(payload)
        lines.append(json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":")))
    return _write_text(Path(path), "".join(line + "\n" for line in lines))


def write_summary_json(result: TunerResult, path: str | Path) -> Path:
    summary = result.to_summary()
    validate_tuner_summary(summary)
    return write_json(summary, path)


def write_balance_report(report: BalanceReport, path: str | Path) -> Path:
    """covariate,original_ac,adjusted_ac rows followed by ``# key=value`` summary lines."""
    df = pd.DataFrame(
        {"covariate": list(report.names), "original_ac": report.original_ac, "adjusted_ac": report.adjusted_ac}
    )
    comments = []
    for key, value in report.summary_dict().items():
        text = str(value).lower() if isinstance(value, bool) else (value if isinstance(value, str) else repr(float(value)))
        comments.append(f"# {key}={text}\n")
    return _write_text(Path(path), df.to_csv(index=False, lineterminator="\n") + "".join(comments))


def read_balance_report(path: str | Path) -> BalanceReport:
    path = Path(path)
    df = read_csv_frame(path, comment="#", dtype={"covariate": str})
    text = path.read_text(encoding="utf-8")
    meta: dict[str, str] = {}
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    for col in ("covariate", "original_ac", "adjusted_ac"):
        if col not in df.columns:
            raise InputError(f"{path} is missing column '{col}'")
    try:
        original = BalanceSummary(
            float(meta["original_mean_ac"]), float(meta["original_median_ac"]), float(meta["original_max_ac"])
        )
        adjusted = BalanceSummary(
            float(meta["adjusted_mean_ac"]), float(meta["adjusted_median_ac"]), float(meta["adjusted_max_ac"])
        )
        return BalanceReport(
            names=tuple(df["covariate"].astype(str)),
            original_ac=df["original_ac"].to_numpy(dtype=np.float64),
            adjusted_ac=df["adjusted_ac"].to_numpy(dtype=np.float64),
            original=original,
            adjusted=adjusted,
            threshold=float(meta["threshold"]),
            threshold_type=meta["threshold_type"],  # type: ignore[arg-type]
            passed=meta["passed"] == "true",
        )
    except (KeyError, ValueError) as e:
        raise InputError(f"{path} has a malformed summary block: {e}") from e


def write_summary_report(result: TunerResult, path: str | Path, title: str = "Pseudo-population Summary") -> Path:
    """Markdown report: configuration, balance before/after and the attempt table."""
    params = result.params
    orig = result.original_corr_results.original
    adj = result.adjusted_corr_results.adjusted
    lines = [
        f"# {title}",
        "",
        "## Configuration",
        f"- Approach: {params['ci_appr']}",
        f"- GPS density: {params['gps_density']}",
        f"- Learners: {', '.join(params['sl_lib'])}",
        f"- Exposure trim quantiles: {params['exposure_trim_qtls']}",
        f"- GPS trim quantiles: {params['gps_trim_qtls']}",
        f"- Balance threshold: {params['covar_bl_trs_type']} < {params['covar_bl_trs']}",
        f"- Max attempts: {params['max_attempt']}",
        f"- Seed: {params['rng_seed']}",
        f"- Config hash: `{result.config_hash}`",
        "",
        "## Balance Summary",
        "| | mean AC | median AC | max AC |",
        "|---|---|---|---|",
        f"| original | {orig.mean_ac:.4f} | {orig.median_ac:.4f} | {orig.max_ac:.4f} |",
        f"| adjusted | {adj.mean_ac:.4f} | {adj.median_ac:.4f} | {adj.max_ac:.4f} |",
        "",
        f"- Passed covariate test: {'yes' if result.passed_covar_test else 'no'}",
        f"- Best attempt: {result.best_attempt} of {len(result.attempts)}",
        f"- Rows in pseudo-population: {result.pseudo_pop.n_rows}",
        "",
        "## Covariates",
        "| covariate | original AC | adjusted AC |",
        "|---|---|---|",
        *[f"| {name} | {o:.4f} | {a:.4f} |" for name, o, a in result.adjusted_corr_results.rows()],
        "",
        "## Attempts",
        "| attempt | seed | hyperparams | transforms | selected AC | passed |",
        "|---|---|---|---|---|---|",
    ]
    for r in result.attempts:
        hp = "-" if r.hyperparams is None else ", ".join(f"{k}={v}" for k, v in r.hyperparams.to_dict().items())
        tf = ", ".join(f"{k}:{'+'.join(v)}" for k, v in r.transforms.items()) or "-"
        sel = f"{r.selected:.4f}" if r.selected is not None else f"error ({r.error})"
        lines.append(f"| {r.attempt} | {r.seed} | {hp} | {tf} | {sel} | {'yes' if r.passed else 'no'} |")
    return _write_text(Path(path), "\n".join(lines) + "\n")
