"""Probability and quantile plots of a tail fit, and CDF error against the data"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Tuple

import numpy as np
import pandas as pd

from ml.gpd import GpdFit, excesses, gpd_cdf, gpd_quantile
from processing.series import TimeSeries
from utils.exceptions import InsufficientDataError, InvalidArgumentError

logger = logging.getLogger(__name__)

MIN_PLOT_POINTS = 3
LOWER_TAIL_REGION = (0.0, 1e-2)


class PlotKind(str, Enum):
    PP = "pp"
    QQ = "qq"


@dataclass
class ProbabilityPlotData:
    kind: PlotKind
    empirical: np.ndarray
    modeled: np.ndarray

    @property
    def max_abs_dev(self) -> float:
        return float(np.max(np.abs(self.empirical - self.modeled)))

    @property
    def rmse_dev(self) -> float:
        return float(np.sqrt(np.mean((self.empirical - self.modeled) ** 2)))

    @property
    def points(self):
        return list(zip(self.empirical.tolist(), self.modeled.tolist()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"kind": self.kind.value, "empirical": self.empirical, "modeled": self.modeled})

    def summary(self) -> dict:
        return {"kind": self.kind.value, "k": int(self.empirical.size),
                "max_abs_dev": self.max_abs_dev, "rmse_dev": self.rmse_dev}


def _plotting_positions(k: int) -> np.ndarray:
    return np.arange(1, k + 1) / (k + 1)


def pp_points(fit: GpdFit, y) -> ProbabilityPlotData:
    """(i/(k+1), H(y_(i))) for the ascending excesses"""
    y = np.sort(np.asarray(y, dtype=float).ravel())
    if y.size < MIN_PLOT_POINTS:
        raise InsufficientDataError(f"PP plot needs at least {MIN_PLOT_POINTS} excesses, got {y.size}")
    return ProbabilityPlotData(kind=PlotKind.PP, empirical=_plotting_positions(y.size),
                               modeled=np.asarray(gpd_cdf(fit.params, y), dtype=float))


def qq_points(fit: GpdFit, series, u: float) -> ProbabilityPlotData:
    """Sub-threshold samples against the conditional lower-tail quantiles.

    The i-th smallest sample X_(i) is paired with u - H^-1(1 - i/(k+1)).
    """
    values = series.samples if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    x = np.sort(values[values < u])
    if x.size < MIN_PLOT_POINTS:
        raise InsufficientDataError(f"QQ plot needs at least {MIN_PLOT_POINTS} samples below u, got {x.size}")
    modeled = u - np.asarray(gpd_quantile(fit.params, 1 - _plotting_positions(x.size)), dtype=float)
    return ProbabilityPlotData(kind=PlotKind.QQ, empirical=x, modeled=modeled)


def qq_envelope(fit: GpdFit, k: int, n_sim: int = 200, level: float = 0.95,
                seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise parametric-bootstrap band for the ordered sub-threshold samples"""
    if k < MIN_PLOT_POINTS:
        raise InsufficientDataError(f"Envelope needs k >= {MIN_PLOT_POINTS}")
    rng = np.random.default_rng(seed)
    draws = fit.params.u - np.asarray(gpd_quantile(fit.params, rng.random((n_sim, k))))
    draws.sort(axis=1)
    tail = (1 - level) / 2
    return np.quantile(draws, tail, axis=0), np.quantile(draws, 1 - tail, axis=0)


def rmse_cdf(model_cdf: Callable, samples, region: Tuple[float, float] = LOWER_TAIL_REGION) -> float:
    """RMS difference between a model CDF and the empirical CDF i/n at the order statistics.

    Only order statistics whose empirical CDF lies within ``region`` count.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise InvalidArgumentError("No samples given")
    empirical = np.arange(1, x.size + 1) / x.size
    inside = (empirical >= region[0]) & (empirical <= region[1])
    if not inside.any():
        raise InvalidArgumentError(f"No empirical points inside region {region}")
    diff = np.asarray(model_cdf(x[inside]), dtype=float) - empirical[inside]
    return float(np.sqrt(np.mean(diff ** 2)))


def validate_fit(fit: GpdFit, series: TimeSeries) -> Tuple[ProbabilityPlotData, ProbabilityPlotData]:
    """PP and QQ data for a tail fit at its own threshold"""
    u = fit.params.u
    pp = pp_points(fit, excesses(series, u))
    qq = qq_points(fit, series, u)
    logger.info(f"PP max deviation {pp.max_abs_dev:.4f}, QQ RMS deviation {qq.rmse_dev:.4g}")
    return pp, qq
