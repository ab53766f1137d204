"""Composite CDF: GPD lower tail, kernel-smoothed interior, GPD upper tail"""
import logging
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate
from statsmodels.nonparametric.bandwidths import select_bandwidth
from statsmodels.nonparametric.kde import KDEUnivariate

from ml.gpd import GpdFit, fit_tail, tail_cdf
from processing.series import TimeSeries
from utils.exceptions import ConstructionError, InvalidArgumentError

logger = logging.getLogger(__name__)

JUNCTION_TOL = 1e-9


@dataclass
class CompositeCdfModel:
    lower: GpdFit
    upper: GpdFit
    bandwidth: float
    support: np.ndarray = field(repr=False)
    kernel_cdf: np.ndarray = field(repr=False)

    @property
    def u_low(self) -> float:
        return self.lower.params.u

    @property
    def zeta_low(self) -> float:
        return self.lower.zeta_u

    @property
    def u_high(self) -> float:
        return -self.upper.params.u

    @property
    def zeta_high(self) -> float:
        return self.upper.zeta_u

    def _interior(self, x: np.ndarray) -> np.ndarray:
        k = np.interp(x, self.support, self.kernel_cdf)
        k_low, k_high = np.interp([self.u_low, self.u_high], self.support, self.kernel_cdf)
        mass = 1.0 - self.zeta_high - self.zeta_low
        return self.zeta_low + (k - k_low) / (k_high - k_low) * mass

    def cdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x_arr).ravel()
        out = np.empty(flat.size)

        low = flat <= self.u_low
        high = flat >= self.u_high
        mid = ~(low | high)
        if low.any():
            out[low] = tail_cdf(self.lower, flat[low])
        if high.any():
            out[high] = 1.0 - np.asarray(tail_cdf(self.upper, -flat[high]))
        if mid.any():
            out[mid] = self._interior(flat[mid])

        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if x_arr.ndim == 0 else out.reshape(x_arr.shape)

    def junction_gaps(self) -> dict:
        inner_low, inner_high = self._interior(np.array([self.u_low, self.u_high]))
        return {"low": abs(inner_low - float(tail_cdf(self.lower, self.u_low))),
                "high": abs(inner_high - (1.0 - float(tail_cdf(self.upper, -self.u_high))))}

    def to_dict(self) -> dict:
        return {"u_low": self.u_low, "zeta_low": self.zeta_low, "u_high": self.u_high,
                "zeta_high": self.zeta_high, "bandwidth": self.bandwidth,
                "lower": self.lower.to_dict(), "upper": self.upper.to_dict()}


def mirror_upper_fit(series: TimeSeries, lower_fit: GpdFit) -> GpdFit:
    """Upper-tail GPD on the negated series using the lower tail's exceedance fraction"""
    u_high = float(np.quantile(series.samples, 1.0 - lower_fit.zeta_u))
    return fit_tail(-series.samples, -u_high)


def build_composite(series: TimeSeries, lower_fit: GpdFit, upper_fit: GpdFit,
                    bandwidth: Union[str, float] = "silverman") -> CompositeCdfModel:
    """Stitch the tails to a Gaussian-kernel interior rescaled to hit both junctions.

    The bandwidth rule is applied to the interior samples only; the kernel
    estimate itself uses the whole series so it has no edge bias at the
    junctions.
    """
    values = series.samples
    u_low, u_high = lower_fit.params.u, -upper_fit.params.u
    if not u_low < u_high:
        raise InvalidArgumentError(f"Lower threshold {u_low} must lie below upper threshold {u_high}")
    if lower_fit.zeta_u + upper_fit.zeta_u >= 1:
        raise InvalidArgumentError("Tail fractions leave no interior mass")

    interior = values[(values >= u_low) & (values <= u_high)]
    if interior.size < 2:
        raise ConstructionError("Fewer than 2 interior samples", {"u_low": u_low, "u_high": u_high})
    h = float(bandwidth) if not isinstance(bandwidth, str) else float(select_bandwidth(interior, bandwidth, None))

    kde = KDEUnivariate(values)
    kde.fit(kernel="gau", bw=h, fft=True)
    support = np.asarray(kde.support, dtype=float)
    # integrate the gridded density; KDEUnivariate.cdf runs quad per grid point
    kernel_cdf = integrate.cumulative_trapezoid(kde.density, support, initial=0.0)
    kernel_cdf = np.maximum.accumulate(kernel_cdf / kernel_cdf[-1])

    k_low, k_high = np.interp([u_low, u_high], support, kernel_cdf)
    if not k_high > k_low:
        raise ConstructionError("Kernel CDF is flat between the junctions",
                                {"u_low": u_low, "u_high": u_high, "bandwidth": h})

    model = CompositeCdfModel(lower=lower_fit, upper=upper_fit, bandwidth=h, support=support, kernel_cdf=kernel_cdf)
    gaps = model.junction_gaps()
    if max(gaps.values()) > JUNCTION_TOL:
        raise ConstructionError("Composite CDF is discontinuous at a junction", {**gaps, "bandwidth": h})
    logger.info(f"Composite model: u_low={u_low:.4g}, u_high={u_high:.4g}, bandwidth={h:.4g}")
    return model
