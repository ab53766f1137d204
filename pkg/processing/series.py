"""Time-series container and the autocorrelation diagnostics that gate the pipeline."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
from statsmodels.tsa.stattools import acf as sm_acf
from statsmodels.tsa.stattools import pacf as sm_pacf

from utils.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

# 95% band of the N(0, 1/L) sampling distribution of a white-noise ACF
ACF_Z = 1.96


class Unit(str, Enum):
    DBM = "dBm"
    LINEAR_MW = "linear-mW"
    DIMENSIONLESS = "dimensionless"


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Ordered real-valued samples with a sampling interval (ms) and unit tag"""

    samples: np.ndarray
    interval: float = 1.0
    unit: Unit = Unit.DBM

    def __post_init__(self):
        values = np.array(self.samples, dtype=float, copy=True).ravel()
        if values.size < 1:
            raise InvalidArgumentError("TimeSeries needs at least one sample")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise InvalidArgumentError(f"Non-finite sample at index {bad}")
        if not self.interval > 0:
            raise InvalidArgumentError(f"Sampling interval must be positive, got {self.interval}")
        values.setflags(write=False)
        object.__setattr__(self, "samples", values)
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self) -> int:
        return self.samples.size

    def with_samples(self, samples, unit: Optional[Unit] = None) -> "TimeSeries":
        """Derived series sharing this one's interval"""
        return TimeSeries(samples, interval=self.interval, unit=self.unit if unit is None else unit)

    def head(self, size: int) -> "TimeSeries":
        return self.with_samples(self.samples[:size])


@dataclass(frozen=True, eq=False)
class AcfResult:
    lags: np.ndarray
    correlations: np.ndarray
    bound: float

    def outside_bound(self) -> List[int]:
        """Lags >= 1 whose correlation leaves the confidence band"""
        mask = np.abs(self.correlations[1:]) > self.bound
        return [int(lag) for lag in self.lags[1:][mask]]


@dataclass(frozen=True)
class IidDiagnostics:
    passed: bool
    acf: AcfResult = field(repr=False)
    acf_squared: AcfResult = field(repr=False)
    violating_lags: List[int]
    violating_lags_squared: List[int]
    max_fraction: float
    tolerance: float

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "iid": self.passed,
            "max_lag": int(self.acf.lags[-1]),
            "violating_lags": self.violating_lags,
            "violating_lags_squared": self.violating_lags_squared,
            "max_violation_fraction": self.max_fraction,
            "tolerance": self.tolerance,
            "bound": self.acf.bound,
        }


def _check_lags(values: np.ndarray, max_lag: int) -> None:
    if values.size < 2:
        raise InvalidArgumentError("Autocorrelation needs at least 2 samples")
    if max_lag < 0 or max_lag >= values.size:
        raise InvalidArgumentError(f"max_lag must lie in [0, {values.size - 1}], got {max_lag}")


def _acf_values(values: np.ndarray, max_lag: int) -> AcfResult:
    _check_lags(values, max_lag)
    lags = np.arange(max_lag + 1)
    bound = ACF_Z / np.sqrt(values.size)

    if np.ptp(values) == 0:
        correlations = np.zeros(max_lag + 1)
    else:
        # biased (divide-by-n) estimator keeps the sequence positive semidefinite
        correlations = np.asarray(sm_acf(values, nlags=max_lag, adjusted=False, fft=values.size > 1000))
        correlations = np.clip(np.nan_to_num(correlations), -1.0, 1.0)
    correlations[0] = 1.0
    return AcfResult(lags=lags, correlations=correlations, bound=bound)


def acf(series: TimeSeries, max_lag: int) -> AcfResult:
    """Sample autocorrelation at lags 0..max_lag with the ±1.96/√L band"""
    return _acf_values(series.samples, max_lag)


def acf_squared(series: TimeSeries, max_lag: int) -> AcfResult:
    """Autocorrelation of the squared mean-removed series (volatility clustering)"""
    centered = series.samples - series.samples.mean()
    return _acf_values(centered ** 2, max_lag)


def pacf(series: TimeSeries, max_lag: int) -> AcfResult:
    """Partial autocorrelation (Yule-Walker), used to read off AR orders"""
    values = series.samples
    _check_lags(values, max_lag)
    max_lag = min(max_lag, values.size // 2 - 1)
    if max_lag < 1 or np.ptp(values) == 0:
        correlations = np.zeros(max(max_lag, 0) + 1)
        correlations[0] = 1.0
    else:
        correlations = np.clip(np.asarray(sm_pacf(values, nlags=max_lag, method="ywm")), -1.0, 1.0)
    return AcfResult(lags=np.arange(correlations.size), correlations=correlations,
                     bound=ACF_Z / np.sqrt(values.size))


def is_iid(series: TimeSeries, max_lag: int, lag_fraction: float = 0.05,
           sampling_slack: float = 0.05) -> IidDiagnostics:
    """Numeric whiteness check on both the plain and the squared ACF.

    The series counts as i.i.d. when, for both ACFs, the fraction of lags in
    1..max_lag outside the band is at most ``lag_fraction + sampling_slack``.
    """
    if max_lag < 1:
        raise InvalidArgumentError(f"max_lag must be >= 1, got {max_lag}")

    plain = acf(series, max_lag)
    squared = acf_squared(series, max_lag)
    violating = plain.outside_bound()
    violating_sq = squared.outside_bound()
    max_fraction = max(len(violating), len(violating_sq)) / max_lag
    tolerance = lag_fraction + sampling_slack
    passed = max_fraction <= tolerance

    if not passed:
        logger.debug(f"Whiteness check failed: {len(violating)} plain and "
                     f"{len(violating_sq)} squared lags outside ±{plain.bound:.4f}")
    return IidDiagnostics(passed=passed, acf=plain, acf_squared=squared,
                          violating_lags=violating, violating_lags_squared=violating_sq,
                          max_fraction=max_fraction, tolerance=tolerance)
