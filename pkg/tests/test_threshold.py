import numpy as np
import pandas as pd
import pytest

from ml.threshold import (Method, ThresholdConfig, ThresholdScan, fit_line_r2, mrl_curve, mrl_threshold,
                          mrl_covariance, prefix_r2, quantile_threshold_grid, select_threshold, stability_curves,
                          stability_threshold, threshold_grid)
from processing.series import TimeSeries
from utils.exceptions import InsufficientDataError, InvalidArgumentError


def test_line_r2_perfect_and_constant():
    x = np.arange(10.0)
    assert fit_line_r2(x, 2 * x + 1).r2 == pytest.approx(1.0)
    flat = fit_line_r2(x, np.full(10, 3.0))
    assert flat.r2 == 1.0
    assert flat.slope == 0.0


def test_line_r2_noise_flat_curve_counts_as_line(rng):
    x = np.arange(20.0)
    y = 0.01 * rng.standard_normal(20)
    assert fit_line_r2(x, y).r2 < 0.5
    fit = fit_line_r2(x, y, y_cov=np.full(20, 0.05 ** 2))
    assert fit.r2 == 1.0
    assert fit.lack_of_fit_p > 0.5


def test_line_r2_kink_beyond_noise_is_not_a_line():
    x = np.arange(30.0)
    y = np.where(x < 15, 0.0, 0.05 * (x - 15))
    fit = fit_line_r2(x, y, y_cov=np.full(30, 0.01 ** 2))
    assert fit.lack_of_fit_p < 1e-6
    assert fit.r2 < 0.95


def test_line_r2_unknown_variances_take_the_largest(rng):
    x = np.arange(10.0)
    y = 0.01 * rng.standard_normal(10)
    variances = np.r_[np.nan, np.full(9, 0.05 ** 2)]
    assert fit_line_r2(x, y, y_cov=variances).r2 == 1.0
    with pytest.raises(InvalidArgumentError):
        fit_line_r2(x, y, y_cov=np.ones(4))


def test_mrl_covariance_of_nested_excesses():
    se, k = np.array([0.2, 0.1, 0.05]), np.array([30, 120, 480])
    cov = mrl_covariance(se, k)
    assert np.diag(cov) == pytest.approx(se ** 2)
    assert cov[0, 2] == pytest.approx(0.2 ** 2 * 30 / 480)
    assert cov[1, 0] == cov[0, 1]
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_mean_excess_past_the_splice_fails_lack_of_fit(splice):
    series, truth = splice
    grid = threshold_grid(series, 40)
    points = mrl_curve(series, grid)
    points = points[points["usable"]]
    past = points[points["u"] > truth["u_star"] + 0.5].index[0]
    prefix = points.loc[:past]
    u, e = prefix["u"].to_numpy(), prefix["mean_excess"].to_numpy()
    correlated = fit_line_r2(u, e, y_cov=mrl_covariance(prefix["se"], prefix["k"]))
    assert correlated.lack_of_fit_p < 1e-4
    assert correlated.r2 < 0.95


def test_line_r2_needs_three_points():
    with pytest.raises(InvalidArgumentError):
        fit_line_r2([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        fit_line_r2([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_prefix_r2_is_nan_below_three_points():
    r2 = prefix_r2(np.arange(5.0), np.arange(5.0))
    assert np.isnan(r2[:2]).all()
    assert r2[2:] == pytest.approx(1.0)


def test_threshold_grid_runs_from_minimum_to_mean(white_noise):
    grid = threshold_grid(white_noise, 40)
    assert grid.size == 40
    assert grid[0] > white_noise.samples.min()
    assert grid[-1] == pytest.approx(white_noise.samples.mean())
    assert np.all(np.diff(grid) > 0)


def test_threshold_grid_degenerate_series():
    with pytest.raises(InvalidArgumentError):
        threshold_grid(TimeSeries(samples=np.ones(10)), 10)


def test_quantile_grid(white_noise):
    grid = quantile_threshold_grid(white_noise, 20, 0.01, 0.3)
    assert grid[0] == pytest.approx(np.quantile(white_noise.samples, 0.01))
    assert grid[-1] == pytest.approx(np.quantile(white_noise.samples, 0.3))


def _curve(u, mean_excess, se=0.001):
    return pd.DataFrame({"u": u, "mean_excess": mean_excess, "se": se, "usable": True})


def test_mrl_linear_over_whole_grid_is_deferred():
    u = np.linspace(-5, 0, 12)
    decision = mrl_threshold(_curve(u, 2.0 - 0.3 * u))
    assert decision.u0 is None
    assert decision.deferred
    assert decision.method is Method.MRL


def test_mrl_picks_end_of_linear_prefix():
    u = np.arange(1.0, 11.0)
    mean_excess = np.r_[1.0 + 0.1 * u[:6], [3.0, 0.2, 4.0, -1.0]]
    decision = mrl_threshold(_curve(u, mean_excess))
    assert decision.u0 == 6.0
    assert decision.r2_mrl >= 0.95


def test_mrl_linear_run_must_be_unbroken():
    u = np.arange(1.0, 21.0)
    mean_excess = u.copy()
    mean_excess[5] += 4.0
    # longer prefixes regain a high R^2 but the run already broke at u=6
    assert fit_line_r2(u, mean_excess).r2 >= 0.95
    decision = mrl_threshold(_curve(u, mean_excess))
    assert decision.u0 == 5.0
    assert not decision.deferred


def test_mrl_not_linear_at_all():
    u = np.arange(1.0, 8.0)
    decision = mrl_threshold(_curve(u, [1.0, 5.0, 0.0, 6.0, -2.0, 7.0, 0.0]))
    assert decision.u0 is None
    assert not decision.deferred


def _scan(u, xi, sigma_star, se=1e-3):
    return ThresholdScan(table=pd.DataFrame({"u": u, "xi": xi, "se_xi": se, "sigma_star": sigma_star,
                                             "se_sigma_star": se, "status": "ok"}))


def test_stability_picks_end_of_flat_region():
    u = np.arange(1.0, 11.0)
    xi = np.r_[np.full(6, 0.1), [0.5, -0.3, 0.6, -0.4]]
    decision = stability_threshold(_scan(u, xi, np.full(10, 1.0)))
    assert decision.u0 == 6.0
    assert decision.method is Method.STABILITY
    assert decision.r2_xi == 1.0


def test_stability_needs_both_parameters():
    u = np.arange(1.0, 11.0)
    sigma_star = np.r_[np.full(4, 1.0), [2.0, 0.1, 3.0, 0.2, 4.0, 0.0]]
    decision = stability_threshold(_scan(u, np.full(10, 0.1), sigma_star))
    assert decision.u0 == 4.0


def test_stability_too_few_fits():
    scan = _scan([1.0, 2.0], [0.1, 0.1], [1.0, 1.0])
    assert stability_threshold(scan).u0 is None


def test_mrl_curve_flags_sparse_thresholds(white_noise):
    grid = threshold_grid(white_noise, 20)
    curve = mrl_curve(white_noise, grid, k_min=30)
    assert not curve["usable"].iloc[0]
    assert curve["usable"].iloc[-1]
    usable = curve[curve["usable"]]
    assert (usable["ci_low"] <= usable["mean_excess"]).all()
    with pytest.raises(InsufficientDataError):
        mrl_curve(white_noise, grid, k_min=10 ** 6)


def test_stability_curves_tag_sparse_thresholds(splice):
    series, _ = splice
    scan = stability_curves(series, threshold_grid(series, 15), k_min=30, n_jobs=1)
    assert set(scan.table["status"]) <= {"ok", "insufficient-data", "estimation-failure"}
    assert (scan.table["status"] == "ok").sum() >= 3
    assert "r2_xi_prefix" in scan.table.columns
    assert scan.grid.tolist() == sorted(scan.grid.tolist())


def _grid_step(series, n_points):
    grid = threshold_grid(series, n_points)
    return grid[1] - grid[0]


def test_select_threshold_on_gpd_tail(splice):
    series, truth = splice
    decision = select_threshold(series, ThresholdConfig(n_jobs=1))
    assert decision.u0 is not None
    assert abs(decision.u0 - truth["u_star"]) <= _grid_step(series, 40) + 1e-9
    assert decision.scan is not None
    assert set(decision.to_dict()) == {"u0", "method", "r2_mrl", "r2_xi", "r2_sigma_star", "rationale",
                                       "deferred"}


def test_shape_and_scale_stay_linear_below_splice(splice):
    series, truth = splice
    scan = stability_curves(series, threshold_grid(series, 40), k_min=30, n_jobs=1)
    below = scan.usable()
    below = below[below["u"] <= truth["u_star"]]
    assert len(below) >= 3
    assert (below["r2_xi_prefix"].dropna() >= 0.95).all()
    assert (below["r2_sigma_star_prefix"].dropna() >= 0.95).all()
    assert stability_threshold(scan).u0 >= truth["u_star"] - _grid_step(series, 40)


def test_refining_grid_moves_threshold_at_most_one_step(splice):
    series, _ = splice
    coarse = select_threshold(series, ThresholdConfig(n_points=40, n_jobs=1))
    fine = select_threshold(series, ThresholdConfig(n_points=80, n_jobs=1))
    assert abs(fine.u0 - coarse.u0) <= _grid_step(series, 40) + 1e-9


@pytest.mark.slow
def test_select_threshold_finds_splice_across_seeds():
    from processing.synthetic import SyntheticSpec, generate

    hits = 0
    for seed in range(20):
        series, truth = generate(SyntheticSpec(family="gpd_tail_splice", n=20000, seed=100 + seed,
                                               params={"xi": 0.1, "sigma": 0.5, "u_star": -2.0, "zeta": 0.05}))
        u0 = select_threshold(series, ThresholdConfig(n_jobs=1)).u0
        hits += u0 is not None and abs(u0 - truth["u_star"]) <= _grid_step(series, 40) + 1e-9
    assert hits >= 18


def test_select_threshold_with_quantile_grid(splice):
    series, _ = splice
    decision = select_threshold(series, ThresholdConfig(grid="quantile", n_points=20, p_low=0.005,
                                                        p_high=0.2, n_jobs=1))
    assert decision.method in (Method.COMBINED, Method.STABILITY, Method.MRL)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        ThresholdConfig(r2_min=1.5).validate()
    with pytest.raises(InvalidArgumentError):
        ThresholdConfig(grid="log").validate()
