import numpy as np
import pytest
from scipy import signal

from ml.arima_garch import (ArimaModel, FilterConfig, GarchModel, arima_garch_pipeline, fit_arima, fit_garch,
                            garch_variance, select_arima_order)
from processing.series import TimeSeries
from processing.synthetic import SyntheticFamily, SyntheticSpec, generate
from utils.exceptions import InsufficientDataError, InvalidArgumentError


def _arma(rng, ar, ma, n=8000, c=0.0):
    eps = rng.standard_normal(n + 500)
    x = signal.lfilter(np.r_[1.0, ma], np.r_[1.0, -np.asarray(ar)], eps)[500:]
    return TimeSeries(samples=c + x)


def test_ar1_recovered(rng):
    model, residuals = fit_arima(_arma(rng, [0.6], [], c=2.0), 1, 0)
    assert model.ar_coeffs[0] == pytest.approx(0.6, abs=0.03)
    assert model.c / (1 - model.ar_coeffs[0]) == pytest.approx(2.0, abs=0.15)
    assert model.innovation_variance == pytest.approx(1.0, rel=0.05)
    assert len(residuals) == 8000 - 1
    assert model.is_stationary()
    assert 0 < model.standard_errors["theta1"] < 0.02


def test_arma11_recovered(rng):
    model, _ = fit_arima(_arma(rng, [0.5], [0.3]), 1, 1)
    assert model.ar_coeffs[0] == pytest.approx(0.5, abs=0.06)
    assert model.ma_coeffs[0] == pytest.approx(0.3, abs=0.06)
    assert model.is_invertible()


def test_white_noise_order_zero(white_noise):
    model, residuals = fit_arima(white_noise, 0, 0)
    assert model.ar_coeffs == () and model.ma_coeffs == ()
    assert residuals.samples.mean() == pytest.approx(0.0, abs=1e-12)


def test_conditioning_range_sets_residual_length(rng):
    _, residuals = fit_arima(_arma(rng, [0.4], [], n=2000), 1, 0, condition_on=3)
    assert len(residuals) == 2000 - 3


def test_too_short_for_order():
    with pytest.raises(InsufficientDataError):
        fit_arima(TimeSeries(samples=np.arange(100.0)), 2, 2)


def test_order_out_of_range(white_noise):
    with pytest.raises(InvalidArgumentError):
        fit_arima(white_noise, 6, 0)


def test_order_selection_finds_dependence(rng):
    model, residuals = select_arima_order(_arma(rng, [0.7], [], n=4000), max_p=2, max_q=1)
    assert model.p + model.q >= 1
    assert residuals.samples.var() == pytest.approx(1.0, rel=0.08)


def test_stationarity_checks():
    model = ArimaModel(p=1, q=1, d=0, c=0.0, ar_coeffs=(1.2,), ma_coeffs=(0.3,), innovation_variance=1.0)
    assert not model.is_stationary()
    assert model.is_invertible()
    assert "aic" in model.to_dict()


def test_garch_model_validation():
    with pytest.raises(InvalidArgumentError):
        GarchModel(k=0.0, gamma=0.5, phi=0.1, psi=0.0)
    with pytest.raises(InvalidArgumentError):
        GarchModel(k=0.1, gamma=0.5, phi=0.05, psi=0.1)
    with pytest.raises(InvalidArgumentError):
        GarchModel(k=0.1, gamma=0.9, phi=0.1, psi=0.05)
    assert not GarchModel(k=1.0, gamma=0.0, phi=0.0, psi=0.0).heteroskedastic


def test_garch_variance_recursion():
    eps = np.array([1.0, -2.0, 0.5])
    variance = garch_variance(eps, k=0.1, gamma=0.5, phi=0.2, psi=0.1, sigma0_sq=1.0)
    v1 = 0.1 + 0.5 * 1.0 + (0.2 - 0.1) * 1.0
    v2 = 0.1 + 0.5 * v1 + (0.2 + 0.1) * 4.0
    assert variance == pytest.approx([1.0, v1, v2])


@pytest.fixture(scope="module")
def gjr_series():
    series, truth = generate(SyntheticSpec(family=SyntheticFamily.ARMA_GJR, n=20000, seed=11,
                                           params={"ar": [], "ma": []}))
    return series, truth


def test_garch_recovers_gjr(gjr_series):
    series, truth = gjr_series
    centered = series.with_samples(series.samples - series.samples.mean())
    model, variance = fit_garch(centered)
    assert model.gamma == pytest.approx(truth["gamma"], abs=0.08)
    assert model.phi == pytest.approx(truth["phi"], abs=0.04)
    assert model.psi == pytest.approx(truth["psi"], abs=0.04)
    assert model.heteroskedastic
    assert variance.shape == (20000,)
    assert np.all(variance > 0)


def test_garch_needs_500_residuals(white_noise):
    with pytest.raises(InsufficientDataError):
        fit_garch(white_noise.head(499))


@pytest.mark.slow
def test_pipeline_standardizes_arma_gjr():
    series, _ = generate(SyntheticSpec(family=SyntheticFamily.ARMA_GJR, n=8000, seed=5))
    filtered = arima_garch_pipeline(series, FilterConfig(p=2, q=2, iid_max_lag=200))
    assert abs(filtered.z.samples.mean()) <= 0.05
    assert filtered.z.samples.var() == pytest.approx(1.0, abs=0.1)
    assert filtered.arima.p == 2 and filtered.arima.q == 2
    assert filtered.is_iid
    np.testing.assert_allclose(filtered.z.samples * filtered.sigma, filtered.epsilon, rtol=1e-12)
    assert set(filtered.to_dict()) == {"arima", "garch", "diagnostics", "n"}


def test_pipeline_records_difference_lag(rng):
    walk = TimeSeries(samples=np.cumsum(rng.standard_normal(3000)))
    filtered = arima_garch_pipeline(walk, FilterConfig(difference_lag=1, p=0, q=0))
    assert filtered.arima.d == 1
    assert len(filtered.z) == 2999


def test_filter_config_validation():
    with pytest.raises(InvalidArgumentError):
        FilterConfig(p=7).validate()
