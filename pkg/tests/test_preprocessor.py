import numpy as np
import pytest

from processing.preprocessor import (TransformKind, difference, normalize_power, power_transform,
                                     to_amplitude, to_linear_power)
from processing.series import TimeSeries, Unit
from utils.exceptions import InvalidArgumentError


def test_difference_lag_one():
    out = difference(TimeSeries(samples=[1.0, 3.0, 6.0, 10.0]), 1)
    assert out.samples.tolist() == [-2.0, -3.0, -4.0]


def test_difference_lag_two():
    out = difference(TimeSeries(samples=[1.0, 3.0, 6.0, 10.0]), 2)
    assert out.samples.tolist() == [-5.0, -7.0]


def test_difference_above_two_needs_override():
    series = TimeSeries(samples=np.arange(10.0))
    with pytest.raises(InvalidArgumentError):
        difference(series, 3)
    assert len(difference(series, 3, allow_higher=True)) == 7


def test_difference_too_short():
    with pytest.raises(InvalidArgumentError):
        difference(TimeSeries(samples=[1.0, 2.0]), 2)


def test_sqrt_transform_rejects_negative_with_index():
    with pytest.raises(InvalidArgumentError, match="index 1"):
        power_transform(TimeSeries(samples=[4.0, -1.0]), TransformKind.SQRT)


def test_log_transform_is_dimensionless():
    out = power_transform(TimeSeries(samples=[1.0, np.e]), "log")
    assert out.samples == pytest.approx([0.0, 1.0])
    assert out.unit is Unit.DIMENSIONLESS


def test_cbrt_accepts_negative():
    out = power_transform(TimeSeries(samples=[-8.0, 27.0]), TransformKind.CBRT)
    assert out.samples == pytest.approx([-2.0, 3.0])


def test_dbm_to_linear_and_normalized():
    series = TimeSeries(samples=[0.0, 10.0], unit=Unit.DBM)
    linear = to_linear_power(series)
    assert linear.samples == pytest.approx([1.0, 10.0])
    assert linear.unit is Unit.LINEAR_MW
    normalized = normalize_power(series)
    assert normalized.samples.mean() == pytest.approx(1.0)


def test_dimensionless_cannot_become_power():
    with pytest.raises(InvalidArgumentError):
        to_linear_power(TimeSeries(samples=[1.0], unit=Unit.DIMENSIONLESS))


def test_amplitude():
    assert to_amplitude([4.0, 9.0]) == pytest.approx([2.0, 3.0])
    with pytest.raises(InvalidArgumentError):
        to_amplitude([-1.0])
