"""ARIMA conditional-mean filter followed by a GJR-GARCH(1,1) variance filter.

The two stages are estimated sequentially. The ARIMA stage maximizes the
Gaussian likelihood conditional on the first max(p, q) samples; the GARCH
stage maximizes the Gaussian quasi-likelihood of the ARIMA residuals with the
initial conditional variance set to their sample variance.
"""
import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import optimize, signal
from scipy.special import expit, logit
from statsmodels.tools.numdiff import approx_hess
from statsmodels.tsa.statespace.tools import (constrain_stationary_univariate,
                                              unconstrain_stationary_univariate)

from processing.preprocessor import TransformKind, difference, power_transform
from processing.series import IidDiagnostics, TimeSeries, Unit, is_iid
from utils.exceptions import EstimationError, EvtError, InsufficientDataError, InvalidArgumentError

logger = logging.getLogger(__name__)

MAX_ORDER = 5
SAMPLES_PER_PARAM = 50
GARCH_MIN_LENGTH = 500
MAX_ITER = 2000
FTOL = 1e-8
# gamma + max(phi + psi, phi - psi) stays below this
PERSISTENCE_CAP = 0.9999
NO_ARCH_EFFECT = 1e-3


@dataclass(frozen=True)
class ArimaModel:
    p: int
    q: int
    d: int
    c: float
    ar_coeffs: Tuple[float, ...]
    ma_coeffs: Tuple[float, ...]
    innovation_variance: float
    loglik: float = np.nan
    n_effective: int = 0
    standard_errors: Dict[str, float] = field(default_factory=dict)

    @property
    def aic(self) -> float:
        return 2 * (self.p + self.q + 2) - 2 * self.loglik

    def is_stationary(self) -> bool:
        # roots of 1 - sum(theta_i z^i) outside the unit circle
        if not self.ar_coeffs:
            return True
        return bool(np.all(np.abs(np.roots(np.r_[1.0, -np.asarray(self.ar_coeffs)])) < 1))

    def is_invertible(self) -> bool:
        if not self.ma_coeffs:
            return True
        return bool(np.all(np.abs(np.roots(np.r_[1.0, np.asarray(self.ma_coeffs)])) < 1))

    def to_dict(self) -> dict:
        data = asdict(self)
        data.update(ar_coeffs=list(self.ar_coeffs), ma_coeffs=list(self.ma_coeffs), aic=self.aic)
        return data


@dataclass(frozen=True)
class GarchModel:
    k: float
    gamma: float
    phi: float
    psi: float
    loglik: float = np.nan
    standard_errors: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.k > 0:
            raise InvalidArgumentError(f"GARCH constant must be positive, got {self.k}")
        if self.gamma < 0 or self.phi < abs(self.psi) - 1e-12:
            raise InvalidArgumentError("GARCH coefficients would allow negative variance")
        if not self.gamma + self.phi + abs(self.psi) < 1:
            raise InvalidArgumentError("GARCH parameters are not covariance stationary")

    @property
    def heteroskedastic(self) -> bool:
        return max(self.phi + self.psi, self.phi - self.psi) >= NO_ARCH_EFFECT

    def to_dict(self) -> dict:
        data = asdict(self)
        data["heteroskedastic"] = self.heteroskedastic
        return data


@dataclass
class FilterConfig:
    power: Optional[TransformKind] = None
    difference_lag: int = 0
    p: Optional[int] = None
    q: Optional[int] = None
    max_order: int = 3
    iid_max_lag: int = 50

    def validate(self) -> None:
        for name in ("p", "q"):
            order = getattr(self, name)
            if order is not None and not 0 <= order <= MAX_ORDER:
                raise InvalidArgumentError(f"ARIMA order {name} must lie in [0, {MAX_ORDER}]")


@dataclass
class FilteredResiduals:
    z: TimeSeries
    arima: ArimaModel
    garch: GarchModel
    diagnostics: IidDiagnostics
    epsilon: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    def __post_init__(self):
        mean, var = float(self.z.samples.mean()), float(self.z.samples.var())
        if abs(mean) > 0.05 or abs(var - 1) > 0.1:
            raise EstimationError(
                f"Standardized residuals off target moments (mean={mean:.3f}, variance={var:.3f})",
                {"mean": mean, "variance": var})

    @property
    def is_iid(self) -> bool:
        return self.diagnostics.passed

    def to_dict(self) -> dict:
        return {"arima": self.arima.to_dict(), "garch": self.garch.to_dict(),
                "diagnostics": self.diagnostics.to_dict(), "n": len(self.z)}


def _split(params: np.ndarray, p: int) -> Tuple[float, np.ndarray, np.ndarray]:
    return params[0], params[1:1 + p], params[1 + p:]


def arima_residuals(x: np.ndarray, c: float, ar: np.ndarray, ma: np.ndarray, t0: int) -> np.ndarray:
    """eps_t for t >= t0, with pre-sample residuals set to zero"""
    w = x[t0:] - c
    for i, theta in enumerate(ar, start=1):
        w = w - theta * x[t0 - i:x.size - i]
    if len(ma) == 0:
        return w
    return signal.lfilter([1.0], np.r_[1.0, ma], w)


def _arima_objective(params, x, p, t0, constrained):
    c, ar, ma = _split(params, p)
    if constrained:
        ar, ma = _constrain(ar, ma)
    eps = arima_residuals(x, c, ar, ma, t0)
    sse = float(eps @ eps)
    if not np.isfinite(sse) or sse <= 0:
        return np.inf
    return 0.5 * np.log(sse / eps.size)


def _constrain(ar, ma):
    ar = constrain_stationary_univariate(np.asarray(ar)) if len(ar) else ar
    ma = -constrain_stationary_univariate(np.asarray(ma)) if len(ma) else ma
    return ar, ma


def _unconstrain(ar, ma):
    ar = unconstrain_stationary_univariate(np.asarray(ar)) if len(ar) else np.asarray(ar)
    ma = unconstrain_stationary_univariate(-np.asarray(ma)) if len(ma) else np.asarray(ma)
    return ar, ma


def _conditional_loglik(eps: np.ndarray) -> float:
    n = eps.size
    return -0.5 * n * (np.log(2 * np.pi * float(eps @ eps) / n) + 1)


def _minimize(objective, x0, args, what: str) -> optimize.OptimizeResult:
    result = optimize.minimize(objective, x0, args=args, method="L-BFGS-B",
                               options={"ftol": FTOL, "gtol": 1e-7, "maxiter": MAX_ITER})
    if not np.isfinite(result.fun) or result.nit >= MAX_ITER:
        raise EstimationError(f"{what} estimation did not converge: {result.message}",
                              {"x": result.x.tolist(), "objective": float(result.fun),
                               "iterations": int(result.nit)})
    if not result.success:
        logger.warning(f"{what} optimizer stopped early ({result.message}); keeping best point")
    return result


def fit_arima(series: TimeSeries, p: int, q: int, d: int = 0,
              condition_on: Optional[int] = None) -> Tuple[ArimaModel, TimeSeries]:
    """Conditional maximum-likelihood ARMA(p, q) fit of a stationary series.

    Returns the model and its residuals over the effective range. ``d`` only
    records the differencing lag the caller applied.
    """
    if not (0 <= p <= MAX_ORDER and 0 <= q <= MAX_ORDER):
        raise InvalidArgumentError(f"ARIMA orders must lie in [0, {MAX_ORDER}], got p={p}, q={q}")
    x = series.samples
    needed = SAMPLES_PER_PARAM * (p + q + 1)
    if x.size < needed:
        raise InsufficientDataError(f"ARIMA({p},{q}) needs at least {needed} samples, got {x.size}")

    t0 = max(p, q) if condition_on is None else max(condition_on, p, q)

    if p == 0 and q == 0:
        c = float(x[t0:].mean())
        eps = x[t0:] - c
        model = ArimaModel(p=0, q=0, d=d, c=c, ar_coeffs=(), ma_coeffs=(),
                           innovation_variance=float(eps.var()), loglik=_conditional_loglik(eps),
                           n_effective=eps.size, standard_errors={"c": float(eps.std() / np.sqrt(eps.size))})
        return model, series.with_samples(eps, unit=Unit.DIMENSIONLESS)

    x0 = np.r_[x.mean(), np.zeros(p + q)]
    result = _minimize(_arima_objective, x0, (x, p, t0, False), f"ARIMA({p},{q})")
    c, ar, ma = _split(result.x, p)

    candidate = ArimaModel(p=p, q=q, d=d, c=c, ar_coeffs=tuple(ar), ma_coeffs=tuple(ma), innovation_variance=1.0)
    if not (candidate.is_stationary() and candidate.is_invertible()):
        logger.info(f"ARIMA({p},{q}) optimum outside the stationary/invertible region; refitting constrained")
        ar0, ma0 = _unconstrain(np.full(p, 0.1), np.zeros(q))
        result = _minimize(_arima_objective, np.r_[c, ar0, ma0], (x, p, t0, True), f"Constrained ARIMA({p},{q})")
        c, ar, ma = _split(result.x, p)
        ar, ma = _constrain(ar, ma)

    params = np.r_[c, ar, ma]
    eps = arima_residuals(x, c, ar, ma, t0)

    def negloglik(theta):
        c_, ar_, ma_ = _split(theta, p)
        e = arima_residuals(x, c_, ar_, ma_, t0)
        return -_conditional_loglik(e)

    names = ["c"] + [f"theta{i}" for i in range(1, p + 1)] + [f"beta{j}" for j in range(1, q + 1)]
    try:
        cov = np.linalg.inv(approx_hess(params, negloglik))
        ses = {name: float(np.sqrt(v)) if v > 0 else np.nan for name, v in zip(names, np.diag(cov))}
    except np.linalg.LinAlgError:
        ses = {name: np.nan for name in names}

    model = ArimaModel(p=p, q=q, d=d, c=float(c), ar_coeffs=tuple(float(a) for a in ar),
                       ma_coeffs=tuple(float(b) for b in ma), innovation_variance=float(eps @ eps / eps.size),
                       loglik=_conditional_loglik(eps), n_effective=eps.size, standard_errors=ses)
    if not (model.is_stationary() and model.is_invertible()):
        raise EstimationError(f"ARIMA({p},{q}) fit is not stationary and invertible", model.to_dict())

    logger.info(f"ARIMA({p},{q}) fitted: c={model.c:.4g}, AR={model.ar_coeffs}, MA={model.ma_coeffs}")
    return model, series.with_samples(eps, unit=Unit.DIMENSIONLESS)


def select_arima_order(series: TimeSeries, max_p: int = 3, max_q: int = 3) -> Tuple[ArimaModel, TimeSeries]:
    """AIC grid search over p, q in 0..max; all fits share the same conditioning range"""
    best = None
    t0 = max(max_p, max_q)
    for p, q in itertools.product(range(max_p + 1), range(max_q + 1)):
        try:
            model, residuals = fit_arima(series, p, q, condition_on=t0)
        except EvtError as e:
            logger.debug(f"ARIMA({p},{q}) skipped: {e}")
            continue
        logger.debug(f"ARIMA({p},{q}) AIC={model.aic:.2f}")
        if best is None or model.aic < best[0].aic:
            best = (model, residuals)
    if best is None:
        raise EstimationError(f"No ARIMA order up to ({max_p},{max_q}) could be fitted")
    logger.info(f"Selected ARIMA({best[0].p},{best[0].q}) by AIC")
    return best


def garch_variance(eps: np.ndarray, k: float, gamma: float, phi: float, psi: float,
                   sigma0_sq: float) -> np.ndarray:
    """Conditional variances of the GJR recursion.

    sigma_t^2 = k + gamma*sigma_{t-1}^2 + phi*eps_{t-1}^2 + psi*sgn(-eps_{t-1})*eps_{t-1}^2
    """
    sq = eps[:-1] ** 2
    drive = k + (phi - psi * np.sign(eps[:-1])) * sq
    variance = np.empty(eps.size)
    variance[0] = sigma0_sq
    if eps.size > 1:
        variance[1:], _ = signal.lfilter([1.0], [1.0, -gamma], drive, zi=[gamma * sigma0_sq])
    return variance


def _garch_negloglik(natural, eps, sigma0_sq) -> float:
    variance = garch_variance(eps, *natural, sigma0_sq)
    if np.any(variance <= 0) or not np.all(np.isfinite(variance)):
        return np.inf
    return 0.5 * float(np.sum(np.log(2 * np.pi * variance) + eps ** 2 / variance))


def _to_natural(theta) -> Tuple[float, float, float, float]:
    kappa, g, c_neg, c_pos = theta
    gamma = PERSISTENCE_CAP * expit(g)
    budget = PERSISTENCE_CAP - gamma
    a_neg, a_pos = budget * expit(c_neg), budget * expit(c_pos)
    return float(np.exp(kappa)), float(gamma), float((a_neg + a_pos) / 2), float((a_neg - a_pos) / 2)


def fit_garch(residuals: TimeSeries) -> Tuple[GarchModel, np.ndarray]:
    """Gaussian quasi-ML GJR-GARCH(1,1) fit; returns the model and sigma_t^2.

    The search runs in an unconstrained space mapped onto k > 0, gamma >= 0
    and nonnegative ARCH coefficients for both residual signs.
    """
    eps = residuals.samples
    if eps.size < GARCH_MIN_LENGTH:
        raise InsufficientDataError(f"GARCH needs at least {GARCH_MIN_LENGTH} residuals, got {eps.size}")
    sigma0_sq = float(eps.var())
    if sigma0_sq == 0:
        raise InvalidArgumentError("Residuals have zero variance")
    if abs(eps.mean()) > 0.1 * np.sqrt(sigma0_sq):
        logger.warning(f"GARCH residuals are not centered (mean={eps.mean():.4g})")

    gamma0, arch0 = 0.85, 0.05
    theta0 = np.array([np.log(sigma0_sq * (1 - gamma0 - arch0)),
                       logit(gamma0 / PERSISTENCE_CAP),
                       logit(arch0 / (PERSISTENCE_CAP - gamma0)),
                       logit(arch0 / (PERSISTENCE_CAP - gamma0))])

    def objective(theta):
        return _garch_negloglik(_to_natural(theta), eps, sigma0_sq) / eps.size

    result = _minimize(objective, theta0, (), "GJR-GARCH(1,1)")
    k, gamma, phi, psi = _to_natural(result.x)

    names = ("k", "gamma", "phi", "psi")
    try:
        hessian = approx_hess(np.array([k, gamma, phi, psi]), _garch_negloglik, args=(eps, sigma0_sq))
        cov = np.linalg.inv(hessian)
        ses = {name: float(np.sqrt(v)) if v > 0 else np.nan for name, v in zip(names, np.diag(cov))}
    except (np.linalg.LinAlgError, ValueError):
        ses = {name: np.nan for name in names}

    model = GarchModel(k=k, gamma=gamma, phi=phi, psi=psi, loglik=-result.fun * eps.size, standard_errors=ses)
    if not model.heteroskedastic:
        logger.info("No conditional heteroskedasticity detected (phi and psi at the boundary)")
    logger.info(f"GJR-GARCH fitted: k={k:.4g}, gamma={gamma:.4f}, phi={phi:.4f}, psi={psi:.4f}")
    return model, garch_variance(eps, k, gamma, phi, psi, sigma0_sq)


def arima_garch_pipeline(series: TimeSeries, cfg: Optional[FilterConfig] = None) -> FilteredResiduals:
    """Stationarity transforms, ARIMA, GJR-GARCH, then standardized residuals z = eps/sigma"""
    cfg = cfg or FilterConfig()
    cfg.validate()

    stationary = series
    if cfg.power is not None:
        stationary = power_transform(stationary, cfg.power)
    if cfg.difference_lag:
        stationary = difference(stationary, cfg.difference_lag, allow_higher=True)

    if cfg.p is None or cfg.q is None:
        arima, eps = select_arima_order(stationary, cfg.max_order, cfg.max_order)
    else:
        arima, eps = fit_arima(stationary, cfg.p, cfg.q)
    if cfg.difference_lag:
        arima = ArimaModel(**{**asdict(arima), "d": cfg.difference_lag})

    garch, variance = fit_garch(eps)
    sigma = np.sqrt(variance)
    z = eps.with_samples(eps.samples / sigma, unit=Unit.DIMENSIONLESS)
    diagnostics = is_iid(z, min(cfg.iid_max_lag, len(z) - 1))
    if not diagnostics.passed:
        logger.warning("Standardized residuals are not i.i.d.; consider re-specifying the orders")

    return FilteredResiduals(z=z, arima=arima, garch=garch, diagnostics=diagnostics,
                             epsilon=eps.samples, sigma=sigma)
