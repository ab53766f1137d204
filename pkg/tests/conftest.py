import numpy as np
import pandas as pd
import pytest

from processing.series import TimeSeries, Unit
from processing.synthetic import SyntheticFamily, SyntheticSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def white_noise(rng):
    return TimeSeries(samples=rng.standard_normal(5000), unit=Unit.DIMENSIONLESS)


@pytest.fixture(scope="session")
def splice():
    """i.i.d. dBm-like series with an exact GPD lower tail below u* = -2"""
    return generate(SyntheticSpec(family=SyntheticFamily.GPD_TAIL_SPLICE, n=20000, seed=7,
                                  params={"xi": 0.1, "sigma": 0.5, "u_star": -2.0, "zeta": 0.05}))


@pytest.fixture
def write_csv_file(tmp_path):
    def write(values, name="series.csv", times=None):
        path = tmp_path / name
        frame = pd.DataFrame({"value": values}) if times is None else pd.DataFrame({"time": times, "value": values})
        frame.to_csv(path, index=False)
        return str(path)

    return write
