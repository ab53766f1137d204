"""Stationarity transforms and power-unit conversions"""
import logging
from enum import Enum

import numpy as np

from processing.series import TimeSeries, Unit
from utils.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

MAX_DIFFERENCE_LAG = 2


class TransformKind(str, Enum):
    SQRT = "sqrt"
    CBRT = "cbrt"
    LOG = "log"


def power_transform(series: TimeSeries, kind: TransformKind) -> TimeSeries:
    """Variance-stabilizing transform; output is dimensionless"""
    kind = TransformKind(kind)
    values = series.samples

    if kind is TransformKind.SQRT:
        invalid = values < 0
    elif kind is TransformKind.LOG:
        invalid = values <= 0
    else:
        invalid = np.zeros(values.size, dtype=bool)
    if invalid.any():
        index = int(np.flatnonzero(invalid)[0])
        raise InvalidArgumentError(
            f"{kind.value} transform undefined at index {index} (value {values[index]})")

    transform = {TransformKind.SQRT: np.sqrt, TransformKind.CBRT: np.cbrt, TransformKind.LOG: np.log}[kind]
    return series.with_samples(transform(values), unit=Unit.DIMENSIONLESS)


def difference(series: TimeSeries, d: int = 1, allow_higher: bool = False) -> TimeSeries:
    """Lag-d difference, out_t = x_t - x_{t+d}"""
    if d < 1:
        raise InvalidArgumentError(f"Difference lag must be >= 1, got {d}")
    if d > MAX_DIFFERENCE_LAG:
        if not allow_higher:
            raise InvalidArgumentError(
                f"Difference lag {d} exceeds {MAX_DIFFERENCE_LAG}; pass allow_higher=True to override")
        logger.warning(f"Differencing at lag {d} > {MAX_DIFFERENCE_LAG} is rarely advisable")
    if len(series) <= d:
        raise InvalidArgumentError(f"Series of length {len(series)} is too short for lag {d}")

    values = series.samples
    return series.with_samples(values[:-d] - values[d:])


def to_linear_power(series: TimeSeries) -> TimeSeries:
    """dBm -> mW"""
    if series.unit is Unit.LINEAR_MW:
        return series
    if series.unit is not Unit.DBM:
        raise InvalidArgumentError(f"Cannot convert {series.unit.value} samples to linear power")
    logger.info("Converting dBm samples to linear power (mW)")
    return series.with_samples(np.power(10.0, series.samples / 10.0), unit=Unit.LINEAR_MW)


def normalize_power(series: TimeSeries) -> TimeSeries:
    """Linear power divided by its sample mean"""
    linear = to_linear_power(series)
    mean = linear.samples.mean()
    logger.info(f"Normalizing linear power by its sample mean {mean:.6g} mW")
    return linear.with_samples(linear.samples / mean, unit=Unit.DIMENSIONLESS)


def to_amplitude(power: np.ndarray) -> np.ndarray:
    """Envelope amplitude of (normalized) linear power samples"""
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise InvalidArgumentError("Linear power must be nonnegative")
    return np.sqrt(power)
