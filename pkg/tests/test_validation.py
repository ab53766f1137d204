import numpy as np
import pytest
from scipy.stats import genpareto

from analytics.validation import PlotKind, pp_points, qq_envelope, qq_points, rmse_cdf, validate_fit
from ml.gpd import fit_gpd, fit_tail
from utils.exceptions import InsufficientDataError, InvalidArgumentError


def test_pp_close_to_diagonal_for_model_data():
    y = genpareto.rvs(c=0.1, scale=1.0, size=5000, random_state=np.random.default_rng(8))
    fit = fit_gpd(y, n_total=50000)
    pp = pp_points(fit, y)
    assert pp.kind is PlotKind.PP
    assert pp.empirical[0] == pytest.approx(1 / 5001)
    assert np.all(np.diff(pp.modeled) >= 0)
    assert pp.max_abs_dev < 0.03


@pytest.mark.slow
def test_pp_deviation_shrinks_with_k():
    deviations = []
    for k in (1000, 10000, 100000):
        y = genpareto.rvs(c=0.1, scale=1.0, size=k, random_state=np.random.default_rng(k))
        deviations.append(pp_points(fit_gpd(y, n_total=k, compute_se=False), y).max_abs_dev)
    assert deviations[2] < deviations[0]
    assert deviations[2] < 0.01


def test_validate_fit_on_gpd_tail(splice):
    series, truth = splice
    fit = fit_tail(series, truth["u_star"])
    pp, qq = validate_fit(fit, series)
    assert pp.max_abs_dev < 0.06
    assert qq.kind is PlotKind.QQ
    assert len(qq.empirical) == fit.k
    assert np.all(qq.empirical < truth["u_star"])
    # the bulk of the QQ points hugs the diagonal
    middle = slice(fit.k // 10, fit.k)
    assert np.median(np.abs(qq.empirical[middle] - qq.modeled[middle])) < 0.1
    assert set(pp.summary()) == {"kind", "k", "max_abs_dev", "rmse_dev"}
    frame = qq.to_frame()
    assert list(frame.columns) == ["kind", "empirical", "modeled"]


def test_plots_need_three_points(splice):
    series, truth = splice
    fit = fit_tail(series, truth["u_star"])
    with pytest.raises(InsufficientDataError):
        pp_points(fit, [0.1, 0.2])
    with pytest.raises(InsufficientDataError):
        qq_points(fit, series, series.samples.min())


def test_qq_envelope_brackets(splice):
    series, truth = splice
    fit = fit_tail(series, truth["u_star"])
    low, high = qq_envelope(fit, 50, n_sim=100, seed=2)
    assert low.shape == high.shape == (50,)
    assert np.all(low <= high)
    assert np.all(high <= fit.params.u)


def test_rmse_cdf_zero_for_exact_empirical_cdf():
    samples = np.arange(1.0, 1001.0)
    assert rmse_cdf(lambda x: x / 1000.0, samples) == pytest.approx(0.0)
    # only the ten order statistics with i/n <= 1e-2 count
    assert rmse_cdf(lambda x: x / 1000.0 + 0.1, samples) == pytest.approx(0.1)


def test_rmse_cdf_region_without_points():
    with pytest.raises(InvalidArgumentError):
        rmse_cdf(lambda x: x, np.arange(10.0), region=(0.0, 0.05))
