"""Generalized Pareto model of lower-tail excesses.

Convention: for a threshold u the excess of a sample x < u is y = u - x, and
the excess CDF is the standard peaks-over-threshold form
H(y) = 1 - (1 + xi*y/sigma)^(-1/xi). This is the upper-tail theory applied to
-X; ``flipped_shape`` reports the opposite-sign shape used by some channel
modeling literature.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize
from scipy.stats import expon, genpareto
from statsmodels.tools.numdiff import approx_hess

from processing.series import TimeSeries
from utils.exceptions import EstimationError, InsufficientDataError, InvalidArgumentError

logger = logging.getLogger(__name__)

# |xi| below this uses the exponential limit
XI_ZERO = 1e-8
# MLE regularity bound: below it the estimator has no standard asymptotics
XI_REGULAR = -0.5
XI_BRACKET = (-0.99, 2.0)
XI_TOL = 1e-10

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class GpdParams:
    xi: float
    sigma: float
    u: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgumentError(f"GPD scale must be positive, got {self.sigma}")

    @property
    def upper_support(self) -> float:
        """Largest attainable excess (inf unless xi < 0)"""
        if self.xi < -XI_ZERO:
            return -self.sigma / self.xi
        return np.inf

    def _dist(self):
        if abs(self.xi) < XI_ZERO:
            return expon(scale=self.sigma)
        return genpareto(c=self.xi, scale=self.sigma)


@dataclass(frozen=True)
class GpdFit:
    params: GpdParams
    k: int
    n_total: int
    loglik: float
    se_xi: float = np.nan
    se_sigma: float = np.nan
    covariance: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 2:
            raise InsufficientDataError(f"A GPD fit needs at least 2 exceedances, got {self.k}")

    @property
    def zeta_u(self) -> float:
        """Exceedance probability Pr{X < u}, estimated as k/n"""
        return self.k / self.n_total

    @property
    def regular(self) -> bool:
        return self.params.xi > XI_REGULAR

    @property
    def flipped_shape(self) -> float:
        return -self.params.xi

    @property
    def se_modified_scale(self) -> float:
        """Delta-method standard error of sigma* = sigma + xi*u"""
        if self.covariance is None:
            return np.nan
        u = self.params.u
        grad = np.array([u, 1.0])
        return float(np.sqrt(max(grad @ self.covariance @ grad, 0.0)))

    def to_dict(self) -> dict:
        return {
            "xi": self.params.xi,
            "xi_flipped": self.flipped_shape,
            "sigma": self.params.sigma,
            "sigma_star": modified_scale(self),
            "u": self.params.u,
            "k": self.k,
            "n_total": self.n_total,
            "zeta_u": self.zeta_u,
            "loglik": self.loglik,
            "se_xi": _finite_or_none(self.se_xi),
            "se_sigma": _finite_or_none(self.se_sigma),
            "regular": self.regular,
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _samples(data: Union[TimeSeries, ArrayLike]) -> np.ndarray:
    if isinstance(data, TimeSeries):
        return data.samples
    return np.asarray(data, dtype=float).ravel()


def excesses(data: Union[TimeSeries, ArrayLike], u: float) -> np.ndarray:
    """u - x for every sample below u, in sample order"""
    values = _samples(data)
    return u - values[values < u]


def gpd_cdf(params: GpdParams, y: ArrayLike):
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise InvalidArgumentError("GPD excesses must be nonnegative")
    probs = np.clip(params._dist().cdf(y_arr), 0.0, 1.0)
    return float(probs) if probs.ndim == 0 else probs


def gpd_quantile(params: GpdParams, p: ArrayLike):
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr >= 1)):
        raise InvalidArgumentError("GPD quantile probability must lie in [0, 1)")
    y = params._dist().ppf(p_arr)
    return float(y) if np.ndim(y) == 0 else y


def log_likelihood(params: GpdParams, y: ArrayLike) -> float:
    """Sum of GPD log densities; -inf when an excess falls outside the support"""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        return -np.inf
    value = float(np.sum(params._dist().logpdf(y_arr)))
    return value if np.isfinite(value) else -np.inf


def _profile_sigma(xi: float, y: np.ndarray) -> float:
    """Scale maximizing the likelihood for a fixed shape.

    Solves k = (1 + xi) * sum(y / (sigma + xi*y)); the right-hand side is
    decreasing in sigma on the admissible range so the root is unique.
    """
    if abs(xi) < XI_ZERO:
        return float(y.mean())
    k = y.size
    y_max = y.max()
    lower = max(0.0, -xi * y_max)

    def score(sigma: float) -> float:
        return (1.0 + xi) * np.sum(y / (sigma + xi * y)) - k

    lo = lower + max(lower, y_max) * 1e-12 + 1e-300
    hi = max(y_max, y.mean()) * (2.0 + 2.0 * abs(xi))
    while score(hi) > 0:
        hi *= 2.0
    return optimize.brentq(score, lo, hi, xtol=1e-14, rtol=1e-13, maxiter=500)


def _profile_loglik(xi: float, y: np.ndarray) -> float:
    sigma = _profile_sigma(xi, y)
    return log_likelihood(GpdParams(xi=xi, sigma=sigma), y)


def _standard_errors(xi: float, sigma: float, y: np.ndarray):
    def negloglik(theta):
        if theta[1] <= 0:
            return np.inf
        return -log_likelihood(GpdParams(xi=theta[0], sigma=theta[1]), y)

    try:
        hessian = approx_hess(np.array([xi, sigma]), negloglik)
        cov = np.linalg.inv(hessian)
        if np.all(np.isfinite(cov)) and np.all(np.diag(cov) > 0):
            return cov
    except np.linalg.LinAlgError:
        pass
    # expected information when the observed one is not usable
    logger.debug("Observed information not invertible; using expected information")
    k = y.size
    return np.array([[(1 + xi) ** 2, sigma * (1 + xi)],
                     [sigma * (1 + xi), 2 * sigma ** 2 * (1 + xi)]]) / k


def fit_gpd(y: ArrayLike, n_total: int, u: float = 0.0, compute_se: bool = True) -> GpdFit:
    """Maximum-likelihood GPD fit of excesses by profiling out the scale.

    The shape is bracketed on a coarse grid over [-0.99, 2] and refined with a
    bounded Brent search; sigma is solved exactly for every trial shape.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise InsufficientDataError(f"A GPD fit needs at least 2 exceedances, got {y.size}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise InvalidArgumentError("GPD excesses must be finite and strictly positive")
    if n_total < y.size:
        raise InvalidArgumentError(f"n_total={n_total} is smaller than the {y.size} exceedances")

    grid = np.linspace(*XI_BRACKET, 61)
    try:
        profile = np.array([_profile_loglik(xi, y) for xi in grid])
    except (ValueError, RuntimeError) as e:
        raise EstimationError(f"GPD profile likelihood failed: {e}", {"k": int(y.size)}) from e
    if not np.any(np.isfinite(profile)):
        raise EstimationError("GPD profile likelihood is infeasible on the whole shape bracket",
                              {"k": int(y.size)})

    best = int(np.nanargmax(np.where(np.isfinite(profile), profile, -np.inf)))
    lo, hi = grid[max(best - 1, 0)], grid[min(best + 1, grid.size - 1)]
    result = optimize.minimize_scalar(lambda xi: -_profile_loglik(xi, y), bounds=(lo, hi),
                                      method="bounded", options={"xatol": XI_TOL, "maxiter": 500})
    if not result.success:
        raise EstimationError(f"GPD shape search did not converge: {result.message}",
                              {"k": int(y.size), "xi_grid_best": float(grid[best])})

    xi_hat = float(result.x) if -result.fun >= profile[best] else float(grid[best])
    sigma_hat = _profile_sigma(xi_hat, y)
    params = GpdParams(xi=xi_hat, sigma=sigma_hat, u=u)
    loglik = log_likelihood(params, y)

    se_xi = se_sigma = np.nan
    covariance = None
    if xi_hat > XI_REGULAR:
        if compute_se:
            covariance = _standard_errors(xi_hat, sigma_hat, y)
            se_xi, se_sigma = np.sqrt(np.diag(covariance))
    else:
        logger.warning(f"Non-regular GPD fit (xi={xi_hat:.3f} <= {XI_REGULAR}); "
                       f"standard errors unavailable")

    return GpdFit(params=params, k=int(y.size), n_total=int(n_total), loglik=loglik,
                  se_xi=float(se_xi), se_sigma=float(se_sigma), covariance=covariance)


def fit_tail(series: Union[TimeSeries, ArrayLike], u: float, compute_se: bool = True) -> GpdFit:
    """Fit the GPD to the excesses of a series below u"""
    values = _samples(series)
    return fit_gpd(excesses(values, u), n_total=values.size, u=u, compute_se=compute_se)


def mean_excess(data: Union[TimeSeries, ArrayLike], u: Optional[float] = None) -> float:
    """Mean of the excesses; ``data`` holds excesses already when u is None"""
    y = _samples(data) if u is None else excesses(data, u)
    if y.size == 0:
        raise InsufficientDataError(f"No samples below threshold {u}")
    return float(y.mean())


def modified_scale(fit: GpdFit) -> float:
    """Threshold-invariant scale sigma* = sigma + xi*u"""
    return fit.params.sigma + fit.params.xi * fit.params.u


def return_level(fit: GpdFit, m: ArrayLike):
    """Level undercut on average once every m observations"""
    m_arr = np.asarray(m, dtype=float)
    m_zeta = m_arr * fit.zeta_u
    if np.any(m_zeta < 1):
        raise InvalidArgumentError(f"Return period too short: m*zeta_u must be >= 1 (zeta_u={fit.zeta_u:.4g})")

    xi, sigma, u = fit.params.xi, fit.params.sigma, fit.params.u
    if abs(xi) < XI_ZERO:
        level = u - sigma * np.log(m_zeta)
    else:
        level = u - sigma / xi * np.expm1(xi * np.log(m_zeta))
    return float(level) if level.ndim == 0 else level


def tail_cdf(fit: GpdFit, x: ArrayLike):
    """Unconditional lower-tail probability Pr{X < x} for x <= u"""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr > fit.params.u):
        raise InvalidArgumentError(f"tail_cdf is defined only at or below u={fit.params.u}")
    # survival function keeps precision deep in the tail
    probs = fit.zeta_u * np.asarray(fit.params._dist().sf(fit.params.u - x_arr))
    return float(probs) if probs.ndim == 0 else probs
