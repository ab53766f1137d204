"""Command-line entry point: `python app.py <command> ...`

Exit codes: 0 success, 2 infeasible or insufficient-data verdict, 1 error.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from analytics.comparison import compare_models
from analytics.pipeline import Mode, PipelineConfig, run_pipeline
from analytics.validation import validate_fit
from config import VERSION
from ml.arima_garch import arima_garch_pipeline
from ml.declustering import decluster, select_decluster_params
from ml.gpd import fit_tail, return_level
from ml.mssd import Verdict, mssd
from ml.threshold import select_threshold, threshold_grid
from processing.file_processor import ingest, write_csv, write_json, write_series
from processing.series import Unit, acf, acf_squared, is_iid, pacf
from processing.synthetic import SyntheticFamily, SyntheticSpec, generate
from utils.exceptions import EvtError, InfeasibleError, InsufficientDataError
from utils.logging import setup_logging

logger = logging.getLogger(__name__)


def _load_config(args) -> PipelineConfig:
    overrides = {"input_path": getattr(args, "input", None), "input_format": getattr(args, "format", None),
                 "unit": getattr(args, "unit", None), "output_dir": args.output_dir, "seed": args.seed,
                 "n_jobs": args.n_jobs, "mode": getattr(args, "mode", None)}
    if args.config:
        return PipelineConfig.from_ini(args.config, **overrides)
    cfg = PipelineConfig()
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def _output(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


def _series(cfg: PipelineConfig):
    return ingest(cfg.input_path, cfg.input_format, Unit(cfg.unit))


def _threshold(args, cfg: PipelineConfig, series) -> float:
    if args.u is not None:
        return args.u
    decision = select_threshold(series, cfg.threshold)
    if decision.u0 is None:
        raise EvtError(f"No optimum threshold: {decision.rationale}")
    return decision.u0


def run_command(args, cfg: PipelineConfig) -> int:
    report = run_pipeline(cfg)
    print(f"{report.status.value}: report written to {_output(cfg, 'report.json')}")
    return report.exit_code


def acf_command(args, cfg: PipelineConfig) -> int:
    series = _series(cfg)
    lag = min(args.max_lag, len(series) - 1)
    plain, squared = acf(series, lag), acf_squared(series, lag)
    partial = pacf(series, lag)
    table = pd.DataFrame({"lag": plain.lags, "acf": plain.correlations, "acf_squared": squared.correlations})
    table["pacf"] = pd.Series(partial.correlations)
    table["bound"] = plain.bound
    write_csv(table, _output(cfg, "acf.csv"))
    diagnostics = is_iid(series, lag)
    write_json(diagnostics.to_dict(), _output(cfg, "iid.json"))
    print(f"i.i.d.: {diagnostics.passed}")
    return 0


def decluster_command(args, cfg: PipelineConfig) -> int:
    series = _series(cfg)
    if args.u is not None and args.r is not None:
        result = decluster(series, args.u, args.r)
    else:
        d = cfg.decluster
        grid = d.u_grid or threshold_grid(series, d.n_points)
        selection = select_decluster_params(series, grid, d.r_grid, d.r2_min, d.param_tolerance,
                                            d.k_min, d.iid_max_lag, d.n_jobs or cfg.n_jobs, d.se_multiple)
        write_csv(selection.scan, _output(cfg, "decluster_scan.csv"))
        result = selection.result
    spans = np.asarray(result.cluster_spans, dtype=int).reshape(-1, 2)
    minima = result.minima.samples if result.minima is not None else np.empty(0)
    write_csv(pd.DataFrame({"start": spans[:, 0], "end": spans[:, 1], "minimum": minima}),
              _output(cfg, "clusters.csv"))
    write_json({"u": result.u, "r": result.r, "n_clusters": result.n_clusters}, _output(cfg, "decluster.json"))
    print(f"u={result.u:.4g}, r={result.r}: {result.n_clusters} clusters")
    return 0


def filter_command(args, cfg: PipelineConfig) -> int:
    filtered = arima_garch_pipeline(_series(cfg), cfg.filter)
    write_series(filtered.z, _output(cfg, "residuals.csv"))
    write_json(filtered.to_dict(), _output(cfg, "filter.json"))
    print(f"ARIMA({filtered.arima.p},{filtered.arima.q}) + GJR-GARCH(1,1); residuals i.i.d.: {filtered.is_iid}")
    return 0


def threshold_scan_command(args, cfg: PipelineConfig) -> int:
    series = _series(cfg)
    decision = select_threshold(series, cfg.threshold)
    if decision.scan is not None:
        write_csv(decision.scan.table, _output(cfg, "scan.csv"))
    write_json(decision.to_dict(), _output(cfg, "threshold.json"))
    print(f"u0={decision.u0} ({decision.method.value}): {decision.rationale}")
    return 0


def fit_command(args, cfg: PipelineConfig) -> int:
    series = _series(cfg)
    fit = fit_tail(series, _threshold(args, cfg, series))
    payload = fit.to_dict()
    periods = [m for m in args.return_periods if m * fit.zeta_u >= 1]
    payload["return_levels"] = {str(int(m)): return_level(fit, m) for m in periods}
    write_json(payload, _output(cfg, "fit.json"))
    print(f"xi={fit.params.xi:.4f} (flipped sign {fit.flipped_shape:.4f}), sigma={fit.params.sigma:.4f}, "
          f"u={fit.params.u:.4g}, k={fit.k}")
    return 0


def mssd_command(args, cfg: PipelineConfig) -> int:
    series = _series(cfg)
    cfg.mssd.seed = cfg.seed
    report = mssd(series, cfg.mssd, u0=_threshold(args, cfg, series))
    write_csv(report.table(), _output(cfg, "mssd.csv"))
    write_json(report.to_dict(), _output(cfg, "mssd.json"))
    if report.verdict is Verdict.INFEASIBLE:
        print(f"infeasible: increase by at least {report.required_increment} samples")
        return 2
    print(f"j0={report.j0} ({report.sample_savings} samples could be saved)")
    return 0


def validate_command(args, cfg: PipelineConfig) -> int:
    series = _series(cfg)
    fit = fit_tail(series, _threshold(args, cfg, series))
    pp, qq = validate_fit(fit, series)
    write_csv(pd.concat([pp.to_frame(), qq.to_frame()], ignore_index=True), _output(cfg, "ppqq.csv"))
    write_json({"fit": fit.to_dict(), "pp": pp.summary(), "qq": qq.summary()}, _output(cfg, "validation.json"))
    print(f"PP max deviation {pp.max_abs_dev:.4f}, QQ RMS deviation {qq.rmse_dev:.4g}")
    return 0


def compare_command(args, cfg: PipelineConfig) -> int:
    series = _series(cfg)
    result = compare_models(series, _threshold(args, cfg, series), cfg.validation)
    write_csv(result.table, _output(cfg, "compare.csv"))
    write_json(result.to_dict(), _output(cfg, "compare.json"))
    for name, value in sorted(result.rmse.items(), key=lambda item: item[1]):
        print(f"{name:30s} {value:.4g}")
    return 0


def _param(text: str):
    key, _, value = text.partition("=")
    if not value:
        raise argparse.ArgumentTypeError(f"Expected key=value, got '{text}'")
    numbers = [float(v) for v in value.split(",")]
    if key in ("ar", "ma"):
        return key, numbers
    number = numbers[0]
    return key, int(number) if key in ("cluster_width", "cluster_gap", "burn_in") else number


def simulate_command(args, cfg: PipelineConfig) -> int:
    spec = SyntheticSpec(family=args.family, n=args.n, seed=cfg.seed, params=dict(args.param or []))
    series, truth = generate(spec)
    path = args.out or _output(cfg, f"{spec.family.value}.csv")
    write_series(series, path)
    write_json(truth, os.path.splitext(path)[0] + ".truth.json")
    print(f"{len(series)} samples written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evt-channel", description="Lower-tail channel modeling with EVT")
    parser.add_argument("--version", action="version", version=VERSION)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [pipeline], [threshold], [mssd], ... sections")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--n-jobs", dest="n_jobs", type=int)
    common.add_argument("--log-level", dest="log_level")

    data = argparse.ArgumentParser(add_help=False, parents=[common])
    data.add_argument("--input", "-i", required=False)
    data.add_argument("--format", choices=["auto", "single", "time_value"])
    data.add_argument("--unit", choices=[u.value for u in Unit])

    with_u = argparse.ArgumentParser(add_help=False, parents=[data])
    with_u.add_argument("--u", type=float, help="threshold; selected automatically when omitted")

    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[data], help="full analysis")
    run.add_argument("--mode", choices=[m.value for m in Mode])
    run.set_defaults(handler=run_command)

    acf_parser = commands.add_parser("acf", parents=[data], help="ACF, squared ACF, PACF and i.i.d. check")
    acf_parser.add_argument("--max-lag", dest="max_lag", type=int, default=50)
    acf_parser.set_defaults(handler=acf_command)

    dc = commands.add_parser("decluster", parents=[with_u], help="cluster minima, or (u, r) selection")
    dc.add_argument("--r", type=int)
    dc.set_defaults(handler=decluster_command)

    commands.add_parser("filter", parents=[data], help="ARIMA + GJR-GARCH standardized residuals") \
        .set_defaults(handler=filter_command)
    commands.add_parser("threshold-scan", parents=[data], help="per-threshold fits and decision") \
        .set_defaults(handler=threshold_scan_command)

    fit = commands.add_parser("fit", parents=[with_u], help="GPD fit of the lower tail")
    fit.add_argument("--return-periods", dest="return_periods", type=float, nargs="*",
                     default=[1e2, 1e4, 1e6])
    fit.set_defaults(handler=fit_command)

    commands.add_parser("mssd", parents=[with_u], help="minimum sample size").set_defaults(handler=mssd_command)
    commands.add_parser("validate", parents=[with_u], help="PP/QQ data").set_defaults(handler=validate_command)
    commands.add_parser("compare", parents=[with_u], help="composite vs extrapolated baselines") \
        .set_defaults(handler=compare_command)

    sim = commands.add_parser("simulate", parents=[common], help="synthetic series with ground truth")
    sim.add_argument("--family", required=True, choices=[f.value for f in SyntheticFamily])
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--param", type=_param, action="append", help="family parameter, key=value")
    sim.add_argument("--out", help="CSV path; defaults to <output-dir>/<family>.csv")
    sim.set_defaults(handler=simulate_command)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = _load_config(args)
        if args.command not in ("simulate", "run") and not cfg.input_path:
            raise EvtError("--input is required (or input_path in the config file)")
        os.makedirs(cfg.output_dir, exist_ok=True)
        return args.handler(args, cfg)
    except (InsufficientDataError, InfeasibleError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 2
    except EvtError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
