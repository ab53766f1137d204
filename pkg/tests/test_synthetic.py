import numpy as np
import pytest
from scipy import stats

from processing.series import Unit, is_iid
from processing.synthetic import BLOCK_SIZE, SyntheticFamily, SyntheticSpec, generate, uniform_stream
from utils.exceptions import InvalidArgumentError


def test_same_seed_same_series():
    spec = SyntheticSpec(family="weibull", n=1000, seed=4)
    a, _ = generate(spec)
    b, _ = generate(spec)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_different_seed_different_series():
    a, _ = generate(SyntheticSpec(family="exponential", n=100, seed=1))
    b, _ = generate(SyntheticSpec(family="exponential", n=100, seed=2))
    assert not np.array_equal(a.samples, b.samples)


def test_stream_independent_of_worker_count():
    n = 2 * BLOCK_SIZE + 17
    serial = uniform_stream(n, 3, SyntheticFamily.RAYLEIGH, 2, n_jobs=1)
    parallel = uniform_stream(n, 3, SyntheticFamily.RAYLEIGH, 2, n_jobs=2)
    np.testing.assert_array_equal(serial, parallel)
    assert serial.shape == (n, 2)
    assert np.all((serial > 0) & (serial < 1))


def test_prefix_stable_across_lengths():
    short, _ = generate(SyntheticSpec(family="white_noise", n=500, seed=9))
    long, _ = generate(SyntheticSpec(family="white_noise", n=5000, seed=9))
    np.testing.assert_array_equal(short.samples, long.samples[:500])


@pytest.mark.parametrize("family, dist", [
    ("exponential", stats.expon(scale=1.0)),
    ("weibull", stats.weibull_min(2.0, scale=1.0)),
    ("rayleigh", stats.rayleigh(scale=1.0)),
    ("rician", stats.rice(1.0, scale=1.0)),
    ("white_noise", stats.norm()),
])
def test_classical_families_follow_their_law(family, dist):
    series, truth = generate(SyntheticSpec(family=family, n=20000, seed=5))
    assert stats.kstest(series.samples, dist.cdf).pvalue > 0.001
    assert truth["family"] == family


def test_splice_tail_is_gpd(splice):
    series, truth = splice
    u = truth["u_star"]
    y = u - series.samples[series.samples < u]
    assert y.size / len(series) == pytest.approx(truth["zeta"], rel=0.1)
    assert stats.kstest(y, stats.genpareto(truth["xi"], scale=truth["sigma"]).cdf).pvalue > 0.001
    assert truth["xi_flipped"] == -truth["xi"]
    assert truth["sigma_star"] == pytest.approx(truth["sigma"] + truth["xi"] * u)
    assert series.unit is Unit.DBM


def test_splice_default_zeta_is_body_mass():
    _, truth = generate(SyntheticSpec(family="gpd_tail_splice", n=10, seed=0))
    assert truth["zeta"] == pytest.approx(stats.norm.cdf(-2.0))


def test_clustered_splice_keeps_cluster_minimum_first():
    series, truth = generate(SyntheticSpec(family="gpd_tail_splice", n=3000, seed=1,
                                           params={"cluster_width": 3}))
    blocks = series.samples.reshape(-1, 3)
    assert np.all(blocks[:, 0] <= blocks[:, 1])
    assert np.all(blocks[:, 0] <= blocks[:, 2])
    assert truth["cluster_width"] == 3
    assert not is_iid(series, 20).passed


def test_cluster_members_are_separated_by_body_samples():
    from ml.declustering import decluster

    series, truth = generate(SyntheticSpec(family="gpd_tail_splice", n=16 * 500, seed=4,
                                           params={"cluster_width": 4, "cluster_gap": 3, "zeta": 0.3}))
    blocks = series.samples.reshape(-1, 16)
    members, fillers = blocks[:, ::4], np.delete(blocks, np.s_[::4], axis=1)
    assert np.all(fillers >= truth["u_star"])
    assert np.all(members[:, :1] <= members)
    assert truth["cluster_gap"] == 3

    below = int(np.sum(series.samples < truth["u_star"]))
    # members are four samples apart, so they only join once r reaches the gap
    assert decluster(series, truth["u_star"], 2).n_clusters == below
    assert decluster(series, truth["u_star"], 3).n_clusters < below / 2


def test_arma_gjr_has_volatility_clustering():
    series, truth = generate(SyntheticSpec(family="arma_gjr", n=10000, seed=2, params={"ar": [], "ma": []}))
    assert len(series) == 10000
    assert not is_iid(series, 50).passed
    assert truth["gamma"] == 0.85


def test_invalid_parameters():
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(family="weibull", n=10, params={"nu": 1.0})
    with pytest.raises(InvalidArgumentError):
        generate(SyntheticSpec(family="weibull", n=10, params={"shape": -1.0}))
    with pytest.raises(InvalidArgumentError):
        generate(SyntheticSpec(family="arma_gjr", n=10, params={"gamma": 0.95, "phi": 0.1}))
    with pytest.raises(InvalidArgumentError):
        generate(SyntheticSpec(family="gpd_tail_splice", n=10, params={"zeta": 1.5}))
    with pytest.raises(InvalidArgumentError):
        SyntheticSpec(family="exponential", n=0)


def test_unknown_family():
    with pytest.raises(ValueError):
        SyntheticSpec(family="pareto", n=10)
