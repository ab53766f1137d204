"""End-to-end tail modeling run: dependency removal, threshold, fit, sample size, validation, comparison"""
import configparser
import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from analytics.comparison import ComparisonResult, ValidationConfig, compare_models
from analytics.validation import ProbabilityPlotData, pp_points, qq_points
from api.schemas import AnalysisReportSchema
from config import VERSION, config
from ml.arima_garch import FilterConfig, arima_garch_pipeline
from ml.declustering import DeclusterConfig, select_decluster_params
from ml.gpd import GpdFit, excesses, fit_gpd, fit_tail
from ml.mssd import MssdConfig, MssdReport, Verdict, mssd
from ml.threshold import Method, ThresholdConfig, ThresholdDecision, select_threshold, threshold_grid
from processing.file_processor import ingest, to_jsonable, write_csv, write_json
from processing.series import IidDiagnostics, TimeSeries, Unit, is_iid
from utils.exceptions import EvtError, InfeasibleError, InsufficientDataError, InvalidArgumentError
from utils.monitoring import track_stage

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    DECLUSTERING = "declustering"
    ARIMA_GARCH = "arima_garch"
    AUTO = "auto"


class Status(str, Enum):
    COMPLETE = "complete"
    COLLECT_MORE_DATA = "collect more data"
    FAILED = "failed"


_SECTIONS = {"threshold": ThresholdConfig, "decluster": DeclusterConfig, "filter": FilterConfig,
             "mssd": MssdConfig, "validation": ValidationConfig}
# settings that change speed but never results
_UNHASHED = {"output_dir", "n_jobs"}


@dataclass
class PipelineConfig:
    input_path: str = ""
    input_format: str = "auto"
    unit: str = Unit.DBM.value
    mode: Mode = Mode.AUTO
    output_dir: str = config.OUTPUT_PATH
    seed: int = config.SEED
    iid_max_lag: int = 50
    min_samples: int = 1000
    run_mssd: bool = True
    run_comparison: bool = True
    n_jobs: Optional[int] = None
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    decluster: DeclusterConfig = field(default_factory=DeclusterConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    mssd: MssdConfig = field(default_factory=MssdConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)

    def validate(self) -> None:
        if not self.input_path or not os.path.isfile(self.input_path):
            raise InvalidArgumentError(f"Input file not found: '{self.input_path}'")
        self.mode = Mode(self.mode)
        Unit(self.unit)
        if self.iid_max_lag < 1:
            raise InvalidArgumentError("iid_max_lag must be >= 1")
        for name in _SECTIONS:
            getattr(self, name).validate()

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(json.loads(json.dumps(dataclasses.asdict(self), default=str)))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every result-affecting setting"""
        def strip(data):
            if isinstance(data, dict):
                return {k: strip(v) for k, v in data.items() if k not in _UNHASHED}
            return data

        canonical = json.dumps(strip(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @classmethod
    def from_ini(cls, path: str, **overrides) -> "PipelineConfig":
        """Load [pipeline] plus one section per stage; keyword overrides win"""
        parser = configparser.ConfigParser()
        # MssdConfig has both M and m
        parser.optionxform = str
        if not parser.read(path):
            raise InvalidArgumentError(f"Config file not found: {path}")
        cfg = cls()
        if parser.has_section("pipeline"):
            _apply(cfg, parser["pipeline"], skip=_SECTIONS)
        for name in _SECTIONS:
            if parser.has_section(name):
                _apply(getattr(cfg, name), parser[name])
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg


def _parse_value(text: str, default: Any) -> Any:
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, Enum):
        return type(default)(text)
    if isinstance(default, (list, tuple)) or "," in text:
        items = [_parse_value(item, default[0] if default else None) for item in text.split(",") if item.strip()]
        return tuple(items) if isinstance(default, tuple) else items
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def _apply(target, section, skip=()) -> None:
    known = {f.name for f in dataclasses.fields(target)}
    for key, text in section.items():
        if key in skip:
            continue
        if key not in known:
            raise InvalidArgumentError(f"Unknown config key '{key}' in [{section.name}]")
        setattr(target, key, _parse_value(text, getattr(target, key)))


@dataclass
class AnalysisReport:
    provenance: Dict[str, Any]
    status: Status = Status.COMPLETE
    exit_code: int = 0
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    required_increment: Optional[int] = None
    n: Optional[int] = None
    completed_stages: List[str] = field(default_factory=list)
    diagnostics: Optional[IidDiagnostics] = None
    mode_used: Optional[str] = None
    removal: Dict[str, Any] = field(default_factory=dict)
    threshold: Optional[ThresholdDecision] = None
    fit: Optional[GpdFit] = None
    mssd: Optional[MssdReport] = None
    plots: List[ProbabilityPlotData] = field(default_factory=list)
    comparison: Optional[ComparisonResult] = None

    def to_dict(self) -> dict:
        dependency = None
        if self.diagnostics is not None:
            dependency = {"input": self.diagnostics.to_dict(), "mode": self.mode_used or "none",
                          "details": self.removal}
        return to_jsonable({
            "status": self.status.value,
            "exit_code": self.exit_code,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "required_increment": self.required_increment,
            "n": self.n,
            "completed_stages": self.completed_stages,
            "dependency": dependency,
            "threshold": self.threshold.to_dict() if self.threshold else None,
            "fit": self.fit.to_dict() if self.fit else None,
            "mssd": self.mssd.to_dict() if self.mssd else None,
            "validation": [plot.summary() for plot in self.plots],
            "comparison": self.comparison.to_dict() if self.comparison else None,
            "provenance": self.provenance,
        })

    def validated(self) -> dict:
        payload = self.to_dict()
        AnalysisReportSchema.model_validate(payload)
        return payload


class _StageFailure(Exception):
    pass


def _collect_more(report: AnalysisReport, increment: int, reason: str) -> None:
    report.status = Status.COLLECT_MORE_DATA
    report.exit_code = 2
    report.required_increment = int(increment)
    report.error = reason
    logger.warning(f"Collect more data: {reason} (at least {increment} more samples)")


def _fail(report: AnalysisReport, stage: str, error: Exception) -> None:
    report.failed_stage = stage
    report.error = f"{type(error).__name__}: {error}"
    if isinstance(error, (InsufficientDataError, InfeasibleError)):
        increment = getattr(error, "required_increment", 0) or math.ceil(0.1 * (report.n or 0))
        _collect_more(report, increment, str(error))
    else:
        report.status = Status.FAILED
        report.exit_code = 1
        logger.error(f"Stage '{stage}' failed: {report.error}")


def _remove_dependency(series: TimeSeries, cfg: PipelineConfig, report: AnalysisReport):
    """Returns the analysis series and, for declustering, the already chosen threshold"""
    lag = min(cfg.iid_max_lag, len(series) - 1)
    report.diagnostics = is_iid(series, lag)
    mode = cfg.mode
    if mode is Mode.AUTO:
        mode = None if report.diagnostics.passed else Mode.DECLUSTERING
        logger.info(f"Auto mode: {'input is i.i.d.' if mode is None else 'declustering dependent input'}")

    if mode is None:
        report.mode_used = "none"
        return series, None

    if mode is Mode.DECLUSTERING:
        d = cfg.decluster
        u_grid = d.u_grid or threshold_grid(series, d.n_points)
        selection = select_decluster_params(series, u_grid, d.r_grid, d.r2_min, d.param_tolerance,
                                            d.k_min, d.iid_max_lag, d.n_jobs or cfg.n_jobs, d.se_multiple)
        write_csv(selection.scan, os.path.join(cfg.output_dir, "decluster_scan.csv"))
        report.mode_used = Mode.DECLUSTERING.value
        report.removal = {"u": selection.u, "r": selection.r, "n_clusters": selection.result.n_clusters}
        decision = ThresholdDecision(u0=selection.u, method=Method.STABILITY,
                                     rationale=f"declustering selection u={selection.u:.4g}, r={selection.r}")
        return selection.result.minima, decision

    filtered = arima_garch_pipeline(series, cfg.filter)
    report.mode_used = Mode.ARIMA_GARCH.value
    report.removal = {"arima": filtered.arima.to_dict(), "garch": filtered.garch.to_dict(),
                      "residuals": filtered.diagnostics.to_dict()}
    return filtered.z, None


def run_pipeline(cfg: PipelineConfig) -> AnalysisReport:
    """Run every stage in order; a failing stage ends the run with a partial report.

    Stage outputs are written as soon as they exist, so a later failure never
    touches them. The report itself is written last, schema-validated.
    """
    cfg.validate()
    cfg.mssd.seed = cfg.seed
    if cfg.n_jobs is not None:
        for name in ("threshold", "decluster", "mssd", "validation"):
            if getattr(cfg, name).n_jobs is None:
                getattr(cfg, name).n_jobs = cfg.n_jobs
    os.makedirs(cfg.output_dir, exist_ok=True)

    report = AnalysisReport(provenance={"config_hash": cfg.config_hash(), "seed": cfg.seed,
                                        "version": VERSION, "input": os.path.basename(cfg.input_path)})
    stage = "ingest"
    try:
        with track_stage(stage):
            series = ingest(cfg.input_path, cfg.input_format, Unit(cfg.unit))
            report.n = len(series)
        report.completed_stages.append(stage)
        if len(series) < cfg.min_samples:
            _collect_more(report, max(cfg.min_samples - len(series), math.ceil(0.1 * len(series))),
                          f"only {len(series)} samples, at least {cfg.min_samples} needed")
            raise _StageFailure

        stage = "dependency"
        with track_stage(stage):
            analysis, fixed = _remove_dependency(series, cfg, report)
        report.completed_stages.append(stage)

        stage = "threshold"
        with track_stage(stage):
            if fixed is not None:
                report.threshold = fixed
            else:
                report.threshold = select_threshold(analysis, cfg.threshold)
                if report.threshold.scan is not None:
                    write_csv(report.threshold.scan.table, os.path.join(cfg.output_dir, "scan.csv"))
            if report.threshold.u0 is None:
                raise EvtError(f"No optimum threshold: {report.threshold.rationale}")
        report.completed_stages.append(stage)
        u0 = report.threshold.u0

        stage = "fit"
        with track_stage(stage):
            if report.mode_used == Mode.DECLUSTERING.value:
                report.fit = fit_gpd(excesses(analysis, u0), n_total=len(series), u=u0)
            else:
                report.fit = fit_tail(analysis, u0)
        report.completed_stages.append(stage)

        if cfg.run_mssd:
            stage = "mssd"
            with track_stage(stage):
                # declustered runs resample the original series, with its own u0
                mssd_series = series if report.mode_used == Mode.DECLUSTERING.value else analysis
                report.mssd = mssd(mssd_series, cfg.mssd, u0=u0)
                write_csv(report.mssd.table(), os.path.join(cfg.output_dir, "mssd.csv"))
            report.completed_stages.append(stage)
            if report.mssd.verdict is Verdict.INFEASIBLE or len(series) < report.mssd.j0:
                _collect_more(report, report.mssd.required_increment,
                              "return levels are not reliably normal at the available sample size")
                raise _StageFailure

        stage = "validation"
        with track_stage(stage):
            pp = pp_points(report.fit, excesses(analysis, u0))
            qq = qq_points(report.fit, analysis, u0)
            report.plots = [pp, qq]
            write_csv(_ppqq_frame(pp, qq), os.path.join(cfg.output_dir, "ppqq.csv"))
        report.completed_stages.append(stage)

        if cfg.run_comparison:
            stage = "comparison"
            with track_stage(stage):
                u_series = u0 if analysis is series or report.mode_used == Mode.DECLUSTERING.value \
                    else float(np.quantile(series.samples, report.fit.zeta_u))
                report.comparison = compare_models(series, u_series, cfg.validation)
                write_csv(report.comparison.table, os.path.join(cfg.output_dir, "compare.csv"))
            report.completed_stages.append(stage)
    except _StageFailure:
        pass
    except EvtError as e:
        _fail(report, stage, e)
    except Exception as e:
        logger.exception(f"Unexpected failure in stage '{stage}'")
        _fail(report, stage, e)

    write_json(report.validated(), os.path.join(cfg.output_dir, "report.json"))
    return report


def _ppqq_frame(pp: ProbabilityPlotData, qq: ProbabilityPlotData) -> pd.DataFrame:
    return pd.concat([pp.to_frame(), qq.to_frame()], ignore_index=True)
