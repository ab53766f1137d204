"""Composite tail model against extrapolated fading baselines on normalized power"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from analytics.composite import CompositeCdfModel, build_composite, mirror_upper_fit
from analytics.validation import LOWER_TAIL_REGION, rmse_cdf
from ml.gpd import fit_tail
from ml.model_builder import BaselineBuilder, Family, FitSelection, ParametricFit
from processing.preprocessor import normalize_power
from processing.series import TimeSeries, Unit
from utils.exceptions import EvtError, InvalidArgumentError

logger = logging.getLogger(__name__)

TABLE_BODY_POINTS = 500
TABLE_TAIL_POINTS = 2000


@dataclass
class ValidationConfig:
    families: List[str] = field(default_factory=lambda: [f.value for f in Family])
    cdf_region: Tuple[float, float] = (1e-3, 1.0)
    first_n: int = 1000
    tail_region: Tuple[float, float] = LOWER_TAIL_REGION
    bandwidth: str = "silverman"
    n_jobs: Optional[int] = None

    def validate(self) -> None:
        for family in self.families:
            Family(family)
        low, high = self.cdf_region
        if not 0 <= low < high <= 1:
            raise InvalidArgumentError(f"Invalid CDF fitting region {self.cdf_region}")
        if self.first_n < 1:
            raise InvalidArgumentError("first_n must be >= 1")


@dataclass
class ComparisonResult:
    table: pd.DataFrame = field(repr=False)
    rmse: Dict[str, float]
    selections: Dict[str, FitSelection] = field(repr=False)
    composite: CompositeCdfModel = field(repr=False)

    def to_csv(self) -> str:
        return self.table.to_csv(index=False)

    def to_dict(self) -> dict:
        return {"rmse": dict(self.rmse),
                "baselines": {name: sel.to_dict() for name, sel in self.selections.items()},
                "composite": self.composite.to_dict()}


def to_comparison_scale(series: TimeSeries) -> TimeSeries:
    """Normalized linear power; dimensionless input is taken as already normalized"""
    if series.unit is Unit.DIMENSIONLESS:
        return series
    return normalize_power(series)


def _map_threshold(series: TimeSeries, u0: float) -> float:
    if series.unit is Unit.DIMENSIONLESS:
        return u0
    linear = 10.0 ** (series.samples / 10.0) if series.unit is Unit.DBM else series.samples
    u_linear = 10.0 ** (u0 / 10.0) if series.unit is Unit.DBM else u0
    return float(u_linear / linear.mean())


def fitting_presets(power: np.ndarray, cfg: ValidationConfig) -> Dict[str, np.ndarray]:
    """Fitting regions of the extrapolation baselines: by empirical CDF and the first observations"""
    ordered = np.sort(power)
    ecdf = np.arange(1, ordered.size + 1) / ordered.size
    low, high = cfg.cdf_region
    return {"cdf_region": ordered[(ecdf >= low) & (ecdf <= high)],
            "first_n": power[:cfg.first_n]}


def _baseline_cdf(fit: ParametricFit) -> Callable:
    if fit.family in BaselineBuilder.AMPLITUDE_FAMILIES:
        return lambda p: fit.cdf(np.sqrt(p))
    return fit.cdf


def _table_indices(n: int) -> np.ndarray:
    tail = np.arange(min(int(np.floor(LOWER_TAIL_REGION[1] * n)), TABLE_TAIL_POINTS))
    body = np.linspace(0, n - 1, TABLE_BODY_POINTS).astype(int)
    return np.unique(np.r_[tail, body])


def compare_models(series: TimeSeries, u0: float, cfg: Optional[ValidationConfig] = None,
                   lower_fit=None) -> ComparisonResult:
    """CDF comparison table and lower-tail RMSE of every model.

    The composite model is refitted on normalized power at the threshold
    corresponding to u0, which leaves the set of tail samples unchanged.
    """
    cfg = cfg or ValidationConfig()
    cfg.validate()
    power = to_comparison_scale(series)
    if np.any(power.samples <= 0):
        raise InvalidArgumentError("Normalized power must be strictly positive")

    lower = lower_fit or fit_tail(power, _map_threshold(series, u0))
    composite = build_composite(power, lower, mirror_upper_fit(power, lower), cfg.bandwidth)

    builder = BaselineBuilder(cfg.families, n_jobs=cfg.n_jobs)
    models: Dict[str, Callable] = {"composite": composite.cdf}
    for name, data in fitting_presets(power.samples, cfg).items():
        try:
            selection = builder.build(name, data)
        except EvtError as e:
            logger.warning(f"Baseline preset '{name}' skipped: {e}")
            continue
        for fit in selection.candidates:
            models[f"{name}_{fit.family.value}"] = _baseline_cdf(fit)
        models[f"{name}_best"] = _baseline_cdf(selection.best)

    ordered = np.sort(power.samples)
    rmse = {}
    for name, model_cdf in models.items():
        rmse[name] = rmse_cdf(model_cdf, ordered, cfg.tail_region)
        logger.info(f"Lower-tail RMSE {name}: {rmse[name]:.4g}")

    index = _table_indices(ordered.size)
    table = pd.DataFrame({"x": ordered[index], "empirical": (index + 1) / ordered.size})
    for name, model_cdf in models.items():
        table[name] = model_cdf(ordered[index])
    return ComparisonResult(table=table, rmse=rmse, selections=dict(builder.selections), composite=composite)
