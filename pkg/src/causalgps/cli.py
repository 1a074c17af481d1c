"""
Command-line interface for the causalgps pipeline.

Usage:
    causalgps simulate --n 5000 --erf-shape linear --out data.csv --truth-out truth.json
    causalgps estimate-gps --input data.csv --covariates c1,c2,c3 --out gps.csv --model-out gps.joblib
    causalgps pseudo-pop --input data.csv --covariates c1,c2,c3 --ci-appr matching --delta-n 1.0 --out-dir run/
    causalgps balance-report --input run/pseudo_pop.csv --covariates c1,c2,c3 --out balance_report.csv
    causalgps estimate-erf --input run/pseudo_pop.csv --model npmetric --bw-seq 0.2,1,0.1 --out-dir run/
    causalgps plot-balance --input run/balance_report.csv --out balance.svg
    causalgps plot-erf --input run/erf.csv --out erf.svg

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

import joblib
import numpy as np
from jsonschema import ValidationError

from .config import settings
from .data.dataset import Dataset, QuantilePair, load_csv, parse_covariate_spec, quantile, read_csv_frame
from .data.simulate import SimConfig, simulate_dataset
from .design.balance import THRESHOLD_TYPES, balance_report
from .design.matching import MatchConfig
from .design.pseudo_population import PseudoPopulation
from .design.tuner import TunerConfig, delta_grid, generate_pseudo_pop, sweep_delta_n
from .design.weighting import WeightConfig
from .errors import CausalGPSError, ConfigError, InputError
from .logging_setup import LogConfig, configure_logging
from .models.gps import GpsModel, estimate_gps
from .models.learners import HyperParamGrid, sample_hyperparams
from .outcome.erf import (
    BandwidthGrid,
    ErfConfig,
    ErfEstimate,
    bootstrap_erf_ci,
    estimate_npmetric_erf,
    estimate_pmetric_erf,
    estimate_semipmetric_erf,
)
from .reporting.artifacts import (
    read_balance_report,
    read_json,
    write_attempts_jsonl,
    write_balance_report,
    write_frame,
    write_json,
    write_summary_json,
    write_summary_report,
)
from .reporting.plots import emit_balance_plot, emit_erf_plot
from .validation.schemas import validate_truth

logger = logging.getLogger(__name__)


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors map onto exit code 1."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> tuple[int, ...]:
    """Comma list of integers; ``a:b`` expands to the inclusive range a..b."""
    values: list[int] = []
    try:
        for part in (p.strip() for p in text.split(",")):
            if not part:
                continue
            if ":" in part:
                lo, hi = (int(v) for v in part.split(":", 1))
                values.extend(range(lo, hi + 1))
            else:
                values.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return tuple(values)


def _quantiles(text: str) -> QuantilePair:
    try:
        return QuantilePair.parse(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _triplet(text: str) -> tuple[float, float, float]:
    values = _float_list(text)
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected 'start,end,step', got {text!r}")
    return values  # type: ignore[return-value]


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=settings.seed, help="Random seed")
    p.add_argument("--nthread", type=_positive_int, default=settings.nthread, help="Worker threads")
    p.add_argument("--log-level", default=settings.log_level, choices=["TRACE", "DEBUG", "INFO"], type=str.upper)
    p.add_argument("--log-file", default=settings.log_file, help="Also write log records to this file")


def _add_input(p: argparse.ArgumentParser, outcome_default: str | None = None, covariates: bool = True) -> None:
    p.add_argument("--input", required=True, help="Input CSV")
    p.add_argument("--exposure", default="exposure", help="Exposure column")
    if covariates:
        p.add_argument("--covariates", required=True, help="Covariates, e.g. c1,c2,region:categorical")
    p.add_argument("--outcome", default=outcome_default, help="Outcome column")


def _add_gps(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gps-density", choices=["normal", "kernel"], default="normal")
    p.add_argument("--sl-lib", default="gbt", help="Learner library, e.g. linear,gbt (several = stacked)")
    p.add_argument("--k-folds", type=_positive_int, default=5, help="Folds for stacked learners")
    p.add_argument("--nrounds", type=_int_list, default=(100,), help="Candidates, e.g. 10:40")
    p.add_argument("--eta", type=_float_list, default=(0.3,))
    p.add_argument("--max-depth", type=_int_list, default=(6,), help="Candidates, e.g. 3,4,5")
    p.add_argument("--min-child-weight", type=_float_list, default=(1.0,))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="causalgps",
        description="Causal inference with continuous exposures via the generalized propensity score",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser, help="Available commands")

    sim = subparsers.add_parser("simulate", help="Write a synthetic dataset with known ERF")
    sim.add_argument("--n", type=int, default=5000)
    sim.add_argument("--erf-shape", choices=["linear", "curved"], default="linear")
    sim.add_argument("--heteroskedastic", action="store_true")
    sim.add_argument("--out", required=True, help="Dataset CSV")
    sim.add_argument("--truth-out", required=True, help="Ground-truth JSON")
    _add_common(sim)

    gps = subparsers.add_parser("estimate-gps", help="Estimate GPS values for a dataset")
    _add_input(gps)
    gps.add_argument("--id-col", default=None)
    _add_gps(gps)
    gps.add_argument("--out", required=True, help="GPS CSV (id, gps, marginal_density)")
    gps.add_argument("--model-out", default=None, help="Persist the fitted GPS model (joblib)")
    _add_common(gps)

    pp = subparsers.add_parser("pseudo-pop", help="Build a matched or weighted pseudo-population")
    _add_input(pp)
    pp.add_argument("--id-col", default=None)
    pp.add_argument("--ci-appr", choices=["matching", "weighting"], required=True)
    _add_gps(pp)
    pp.add_argument("--exposure-trim", type=_quantiles, default=QuantilePair(0.01, 0.99))
    pp.add_argument("--gps-trim", type=_quantiles, default=QuantilePair(0.0, 1.0))
    pp.add_argument("--use-cov-transform", action="store_true")
    pp.add_argument("--transformers", default="pow2,pow3")
    pp.add_argument("--max-attempt", type=_positive_int, default=10)
    pp.add_argument("--covar-bl-trs", type=float, default=0.1)
    pp.add_argument("--covar-bl-trs-type", choices=list(THRESHOLD_TYPES), default="maximal")
    pp.add_argument("--delta-n", type=float, default=None, help="Caliper (matching only)")
    pp.add_argument("--delta-n-grid", type=_triplet, default=None, help="Caliper sweep start,end,step")
    pp.add_argument("--scale", type=float, default=1.0, help="Weight of the GPS coordinate in the distance")
    pp.add_argument("--dist-measure", choices=["l1"], default="l1")
    pp.add_argument("--bin-seq", type=_float_list, default=None, help="Explicit exposure levels")
    pp.add_argument("--weight-cap", type=float, default=10.0, help="Stabilized weight cap (inf disables)")
    pp.add_argument("--gps-model", default=None, help="Reuse a persisted GPS model (one attempt)")
    pp.add_argument("--include-original-data", action="store_true")
    pp.add_argument("--out-dir", default=settings.output_dir)
    _add_common(pp)

    bal = subparsers.add_parser("balance-report", help="Covariate balance of a pseudo-population CSV")
    _add_input(bal)
    bal.add_argument("--covar-bl-trs", type=float, default=0.1)
    bal.add_argument("--covar-bl-trs-type", choices=list(THRESHOLD_TYPES), default="maximal")
    bal.add_argument("--out", required=True)
    _add_common(bal)

    erf = subparsers.add_parser("estimate-erf", help="Exposure-response function on a pseudo-population")
    _add_input(erf, outcome_default="outcome", covariates=False)
    erf.add_argument("--model", choices=["pmetric", "semipmetric", "npmetric"], default="npmetric")
    erf.add_argument("--family", choices=["gaussian", "poisson"], default="gaussian")
    erf.add_argument("--spline-df", type=int, default=4)
    erf.add_argument("--bw-seq", type=_triplet, default=(0.2, 1.0, 0.1), help="Bandwidths start,end,step")
    erf.add_argument("--w-vals", type=_triplet, default=None, help="Evaluation grid start,end,step")
    erf.add_argument("--w-vals-qtls", type=_quantiles, default=QuantilePair(0.05, 0.95))
    erf.add_argument("--w-count", type=_positive_int, default=41)
    erf.add_argument("--bootstrap-b", type=int, default=0, help="Bootstrap replicates (0 = no bands)")
    erf.add_argument("--bootstrap-m", type=int, default=None, help="Rows per replicate (default n^0.9)")
    erf.add_argument("--alpha", type=float, default=0.05)
    erf.add_argument("--out-dir", default=settings.output_dir)
    _add_common(erf)

    pb = subparsers.add_parser("plot-balance", help="SVG balance plot from balance_report.csv")
    pb.add_argument("--input", required=True)
    pb.add_argument("--threshold", type=float, default=None, help="Defaults to the report's threshold")
    pb.add_argument("--summary", default=None, help="summary.json for the details block")
    pb.add_argument("--out", required=True)
    _add_common(pb)

    pe = subparsers.add_parser("plot-erf", help="SVG ERF plot from erf.csv")
    pe.add_argument("--input", required=True)
    pe.add_argument("--out", required=True)
    pe.add_argument("--x-label", default="Exposure")
    pe.add_argument("--y-label", default="Exposure-response")
    _add_common(pe)
    return parser


def _read_dataset(args: argparse.Namespace) -> Dataset:
    return load_csv(
        args.input,
        args.exposure,
        parse_covariate_spec(args.covariates),
        outcome_col=args.outcome,
        id_col=getattr(args, "id_col", None),
    )


def _read_pseudo_pop(args: argparse.Namespace) -> PseudoPopulation:
    path = Path(args.input)
    df = read_csv_frame(path, dtype=str, keep_default_na=False)
    covars = parse_covariate_spec(args.covariates) if getattr(args, "covariates", None) else {}
    return PseudoPopulation.from_frame(df, args.exposure, covars, args.outcome, source=str(path))


def _grid(args: argparse.Namespace) -> HyperParamGrid:
    return HyperParamGrid(
        nrounds=args.nrounds, eta=args.eta, max_depth=args.max_depth, min_child_weight=args.min_child_weight
    )


def _sl_lib(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def cmd_simulate(args: argparse.Namespace) -> None:
    ds, truth = simulate_dataset(SimConfig(n=args.n, erf_shape=args.erf_shape, heteroskedastic=args.heteroskedastic, seed=args.seed))
    validate_truth(truth)
    write_frame(ds.to_frame(), args.out)
    write_json(truth, args.truth_out)
    logger.info("simulated %d rows (%s%s) -> %s", ds.n_rows, args.erf_shape, ", heteroskedastic" if args.heteroskedastic else "", args.out)


def cmd_estimate_gps(args: argparse.Namespace) -> None:
    ds = _read_dataset(args)
    cfg = TunerConfig(gps_density=args.gps_density, hyperparam_grid=_grid(args), sl_lib=_sl_lib(args.sl_lib), k_folds=args.k_folds, rng_seed=args.seed, nthread=args.nthread)
    hp = sample_hyperparams(cfg.hyperparam_grid, np.random.default_rng(args.seed))
    est = estimate_gps(ds, cfg.gps_density, cfg.learner_spec(hp), args.seed, args.nthread)
    write_frame(est.to_frame(), args.out)
    if args.model_out:
        Path(args.model_out).parent.mkdir(parents=True, exist_ok=True)
        joblib.dump(est.model, args.model_out)
    logger.info("estimated %s GPS for %d rows -> %s", args.gps_density, ds.n_rows, args.out)


def _load_gps_model(path: str) -> GpsModel:
    p = Path(path)
    if not p.exists():
        raise InputError(f"input file not found: {p}")
    model = joblib.load(p)
    if not isinstance(model, GpsModel):
        raise InputError(f"{p} does not hold a GPS model")
    return model


def cmd_pseudo_pop(args: argparse.Namespace) -> None:
    if args.ci_appr == "matching" and args.delta_n is None and args.delta_n_grid is None:
        raise UsageError("pseudo-pop: --delta-n is required when --ci-appr matching")
    if args.ci_appr != "matching" and args.delta_n_grid is not None:
        raise UsageError("pseudo-pop: --delta-n-grid applies to --ci-appr matching only")
    match_cfg = None
    if args.ci_appr == "matching":
        first = args.delta_n if args.delta_n is not None else args.delta_n_grid[0]
        match_cfg = MatchConfig(first, args.scale, args.dist_measure, args.bin_seq)
    cfg = TunerConfig(
        ci_appr=args.ci_appr,
        gps_density=args.gps_density,
        exposure_trim_qtls=args.exposure_trim,
        gps_trim_qtls=args.gps_trim,
        use_cov_transform=args.use_cov_transform,
        transformers=tuple(p.strip() for p in args.transformers.split(",") if p.strip()),
        hyperparam_grid=_grid(args),
        sl_lib=_sl_lib(args.sl_lib),
        k_folds=args.k_folds,
        max_attempt=args.max_attempt,
        covar_bl_trs=args.covar_bl_trs,
        covar_bl_trs_type=args.covar_bl_trs_type,
        match_cfg=match_cfg,
        weight_cfg=WeightConfig(args.weight_cap),
        rng_seed=args.seed,
        nthread=args.nthread,
        include_original_data=args.include_original_data,
    )
    gps_model = _load_gps_model(args.gps_model) if args.gps_model else None
    ds = _read_dataset(args)

    if args.delta_n_grid is not None:
        sweep = sweep_delta_n(ds, cfg, delta_grid(*args.delta_n_grid), gps_model)
        result = sweep.best
        logger.info("caliper sweep over %d values picked delta_n=%g", len(sweep.deltas), sweep.deltas[sweep.best_index])
    else:
        result = generate_pseudo_pop(ds, cfg, gps_model)

    out = Path(args.out_dir)
    write_frame(result.pseudo_pop.to_frame(), out / "pseudo_pop.csv")
    write_balance_report(result.adjusted_corr_results, out / "balance_report.csv")
    write_attempts_jsonl(result.attempts, out / "attempts.jsonl")
    write_summary_json(result, out / "summary.json")
    write_summary_report(result, out / "summary.md")
    if result.original_data is not None:
        write_frame(result.original_data.to_frame(), out / "original_data.csv")
    logger.info(
        "pseudo-population with %d rows (best attempt %d, passed=%s) -> %s",
        result.pseudo_pop.n_rows,
        result.best_attempt,
        result.passed_covar_test,
        out,
    )


def cmd_balance_report(args: argparse.Namespace) -> None:
    pp = _read_pseudo_pop(args)
    report = balance_report(pp, args.covar_bl_trs, args.covar_bl_trs_type)
    write_balance_report(report, args.out)
    logger.info("balance %s AC %.4f (passed=%s) -> %s", args.covar_bl_trs_type, report.selected, report.passed, args.out)


def _w_vals(args: argparse.Namespace, pp: PseudoPopulation) -> np.ndarray:
    if args.w_vals is not None:
        start, end, step = args.w_vals
        if not (step > 0 and start <= end):
            raise ConfigError(f"--w-vals needs start <= end and step > 0, got {args.w_vals}")
        count = int(math.floor((end - start) / step + 1e-9)) + 1
        return start + step * np.arange(count, dtype=np.float64)
    e = pp.data.exposure[pp.weights > 0]
    q = args.w_vals_qtls
    return np.linspace(quantile(e, q.lo), quantile(e, q.hi), args.w_count)


def cmd_estimate_erf(args: argparse.Namespace) -> None:
    pp = _read_pseudo_pop(args)
    w_vals = _w_vals(args, pp)
    out = Path(args.out_dir)
    if args.model == "pmetric":
        fit = estimate_pmetric_erf(pp, args.family)
        write_json(fit.to_dict(), out / "pmetric.json")
        erf: ErfEstimate = fit.to_erf(w_vals)
    elif args.model == "semipmetric":
        erf = estimate_semipmetric_erf(pp, args.spline_df, w_vals)
    else:
        erf_cfg = ErfConfig(BandwidthGrid(*args.bw_seq), tuple(w_vals))
        if args.bootstrap_b > 0:
            n = int(np.count_nonzero(pp.weights > 0))
            m = args.bootstrap_m if args.bootstrap_m is not None else int(math.floor(n**0.9))
            erf = bootstrap_erf_ci(pp, m, args.bootstrap_b, erf_cfg, args.seed, args.alpha, args.nthread)
        else:
            assert pp.data.outcome is not None
            erf = estimate_npmetric_erf(
                pp.data.outcome, pp.data.exposure, pp.weights, erf_cfg.bw_grid, w_vals, nthread=args.nthread
            )
        write_frame(erf.risks_frame(), out / "risks.csv")
    write_frame(erf.to_frame(), out / "erf.csv")
    logger.info("%s ERF at %d points -> %s", args.model, w_vals.size, out / "erf.csv")


def cmd_plot_balance(args: argparse.Namespace) -> None:
    report = read_balance_report(args.input)
    threshold = args.threshold if args.threshold is not None else report.threshold
    details: dict[str, Any] | None = None
    if args.summary:
        summary = read_json(args.summary)
        details = {
            "approach": summary.get("params", {}).get("ci_appr"),
            "gps density": summary.get("params", {}).get("gps_density"),
            "passed": summary.get("passed_covar_test"),
            "best attempt": summary.get("best_attempt"),
            "attempts": summary.get("n_attempts"),
            "rows": summary.get("n_rows"),
        }
    emit_balance_plot(report, threshold, args.out, details)
    logger.info("balance plot -> %s", args.out)


def cmd_plot_erf(args: argparse.Namespace) -> None:
    erf = ErfEstimate.from_frame(read_csv_frame(args.input))
    emit_erf_plot(erf, args.out, args.x_label, args.y_label)
    logger.info("ERF plot -> %s", args.out)


COMMANDS: dict[str, Callable[[argparse.Namespace], None]] = {
    "simulate": cmd_simulate,
    "estimate-gps": cmd_estimate_gps,
    "pseudo-pop": cmd_pseudo_pop,
    "balance-report": cmd_balance_report,
    "estimate-erf": cmd_estimate_erf,
    "plot-balance": cmd_plot_balance,
    "plot-erf": cmd_plot_erf,
}


def run_subcommand(argv: Sequence[str]) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command is None:
            raise UsageError("causalgps: a subcommand is required: " + " | ".join(COMMANDS))
        configure_logging(LogConfig(level=args.log_level, file_path=args.log_file))
        COMMANDS[args.command](args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (CausalGPSError, ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
