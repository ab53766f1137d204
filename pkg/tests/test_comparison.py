import numpy as np
import pytest

from analytics.comparison import (ValidationConfig, _map_threshold, compare_models, fitting_presets,
                                  to_comparison_scale)
from processing.series import TimeSeries, Unit
from utils.exceptions import InvalidArgumentError


def test_threshold_maps_to_normalized_power():
    series = TimeSeries(samples=[0.0, 10.0], unit=Unit.DBM)
    # mean linear power is 5.5 mW; 0 dBm is 1 mW
    assert _map_threshold(series, 0.0) == pytest.approx(1 / 5.5)
    dimensionless = TimeSeries(samples=[0.5, 1.5], unit=Unit.DIMENSIONLESS)
    assert _map_threshold(dimensionless, 0.7) == 0.7


def test_comparison_scale_is_mean_normalized(splice):
    series, _ = splice
    power = to_comparison_scale(series)
    assert power.samples.mean() == pytest.approx(1.0)
    assert power.unit is Unit.DIMENSIONLESS


def test_fitting_presets():
    power = np.arange(1.0, 2001.0)
    presets = fitting_presets(power, ValidationConfig(cdf_region=(0.5, 1.0), first_n=100))
    assert presets["cdf_region"].min() == 1000.0
    assert presets["first_n"].tolist() == power[:100].tolist()


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        ValidationConfig(cdf_region=(0.5, 0.2)).validate()
    with pytest.raises(ValueError):
        ValidationConfig(families=["gamma"]).validate()


@pytest.fixture(scope="module")
def comparison(splice):
    series, truth = splice
    cfg = ValidationConfig(families=["weibull", "nakagami", "normal"], n_jobs=1)
    return compare_models(series.head(10000), truth["u_star"], cfg)


def test_table_has_every_model(comparison):
    columns = set(comparison.table.columns)
    assert {"x", "empirical", "composite", "cdf_region_weibull", "first_n_normal", "cdf_region_best"} <= columns
    assert np.all(np.diff(comparison.table["x"]) >= 0)
    assert set(comparison.rmse) == columns - {"x", "empirical"}


def test_composite_beats_normal_in_the_tail(comparison):
    normal = min(comparison.rmse["cdf_region_normal"], comparison.rmse["first_n_normal"])
    assert comparison.rmse["composite"] < normal


def test_composite_threshold_mapped_to_power(comparison, splice):
    series, truth = splice
    power = to_comparison_scale(series.head(10000))
    expected = _map_threshold(series.head(10000), truth["u_star"])
    assert comparison.composite.u_low == pytest.approx(expected)
    assert comparison.composite.zeta_low == pytest.approx(np.mean(power.samples < expected))


def test_comparison_record(comparison):
    record = comparison.to_dict()
    assert set(record) == {"rmse", "baselines", "composite"}
    assert set(record["baselines"]) == {"cdf_region", "first_n"}


@pytest.mark.slow
def test_composite_beats_extrapolated_fading_models_across_seeds():
    from processing.synthetic import SyntheticSpec, generate

    cfg = ValidationConfig(families=["weibull", "rician"], cdf_region=(1e-3, 1.0), n_jobs=1)
    wins = 0
    for seed in range(20):
        series, truth = generate(SyntheticSpec(family="gpd_tail_splice", n=10000, seed=200 + seed,
                                               params={"xi": 0.1, "sigma": 0.5, "u_star": -2.0, "zeta": 0.05}))
        rmse = compare_models(series, truth["u_star"], cfg).rmse
        wins += rmse["composite"] < min(rmse["cdf_region_weibull"], rmse["cdf_region_rician"])
    assert wins >= 18
