"""Classical fading-distribution baselines and their AIC/BIC selection"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from processing.preprocessor import to_amplitude
from utils.exceptions import EstimationError, EvtError, InsufficientDataError, InvalidArgumentError
from utils.scheduling import parallel_map

logger = logging.getLogger(__name__)

MIN_FIT_SIZE = 50
# candidates this close to the best AIC are ranked by BIC
AIC_TIE = 2.0


class Family(str, Enum):
    WEIBULL = "weibull"
    RICIAN = "rician"
    LOGNORMAL = "lognormal"
    NAKAGAMI = "nakagami"
    NORMAL = "normal"

    @property
    def positive_support(self) -> bool:
        return self is not Family.NORMAL


@dataclass(frozen=True)
class ParametricFit:
    family: Family
    params: Dict[str, float]
    loglik: float
    n: int

    @property
    def k_params(self) -> int:
        return len(self.params)

    @property
    def aic(self) -> float:
        return 2 * self.k_params - 2 * self.loglik

    @property
    def bic(self) -> float:
        return self.k_params * np.log(self.n) - 2 * self.loglik

    def distribution(self):
        """Frozen scipy distribution with the fitted parameters"""
        p = self.params
        if self.family is Family.WEIBULL:
            return stats.weibull_min(p["shape"], scale=p["scale"])
        if self.family is Family.RICIAN:
            return stats.rice(p["nu"] / p["sigma"], scale=p["sigma"])
        if self.family is Family.LOGNORMAL:
            return stats.lognorm(p["sigma"], scale=np.exp(p["mu"]))
        if self.family is Family.NAKAGAMI:
            return stats.nakagami(p["m"], scale=np.sqrt(p["omega"]))
        return stats.norm(loc=p["mu"], scale=p["sigma"])

    def cdf(self, x):
        return self.distribution().cdf(np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": dict(self.params), "loglik": self.loglik,
                "aic": self.aic, "bic": self.bic, "n": self.n}


@dataclass
class FitSelection:
    best: ParametricFit
    candidates: List[ParametricFit]
    failures: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"best": self.best.family.value,
                "candidates": [fit.to_dict() for fit in self.candidates],
                "failures": dict(self.failures)}


def _rician_start(x: np.ndarray) -> Tuple[float, float]:
    """Moment estimates of (nu, sigma) from E[x^2] and E[x^4]"""
    m2, m4 = np.mean(x ** 2), np.mean(x ** 4)
    nu_sq = np.sqrt(max(2 * m2 ** 2 - m4, 0.0))
    sigma_sq = max((m2 - nu_sq) / 2, m2 * 1e-3)
    return float(np.sqrt(nu_sq)), float(np.sqrt(sigma_sq))


def _fit_params(x: np.ndarray, family: Family) -> Dict[str, float]:
    if family is Family.WEIBULL:
        shape, _, scale = stats.weibull_min.fit(x, floc=0)
        return {"shape": shape, "scale": scale}
    if family is Family.RICIAN:
        nu0, sigma0 = _rician_start(x)
        b, _, sigma = stats.rice.fit(x, max(nu0 / sigma0, 1e-3), floc=0, scale=sigma0)
        return {"nu": b * sigma, "sigma": sigma}
    if family is Family.LOGNORMAL:
        s, _, scale = stats.lognorm.fit(x, floc=0)
        return {"mu": np.log(scale), "sigma": s}
    if family is Family.NAKAGAMI:
        m, _, scale = stats.nakagami.fit(x, floc=0)
        return {"m": m, "omega": scale ** 2}
    mu, sigma = stats.norm.fit(x)
    return {"mu": mu, "sigma": sigma}


def fit_parametric(data, family: Union[Family, str]) -> ParametricFit:
    """Maximum-likelihood fit of one baseline family"""
    family = Family(family)
    x = np.asarray(data, dtype=float).ravel()
    if x.size < MIN_FIT_SIZE:
        raise InsufficientDataError(f"{family.value} fit needs at least {MIN_FIT_SIZE} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("Fit input must be finite")
    if family.positive_support and np.any(x <= 0):
        raise InvalidArgumentError(f"{family.value} fit needs strictly positive data")

    try:
        params = {name: float(value) for name, value in _fit_params(x, family).items()}
    except (RuntimeError, ValueError, FloatingPointError) as e:
        raise EstimationError(f"{family.value} fit failed: {e}", {"family": family.value}) from e

    if not all(np.isfinite(v) for v in params.values()):
        raise EstimationError(f"{family.value} fit did not converge", {"family": family.value, "params": params})
    fit = ParametricFit(family=family, params=params, loglik=0.0, n=int(x.size))
    loglik = float(np.sum(fit.distribution().logpdf(x)))
    if not np.isfinite(loglik):
        raise EstimationError(f"{family.value} fit has a non-finite likelihood", {"params": params})
    return ParametricFit(family=family, params=params, loglik=loglik, n=int(x.size))


def _fit_or_error(task):
    data, family = task
    try:
        return fit_parametric(data, family)
    except EvtError as e:
        return str(e)


def select_best_fit(data, families: Sequence[Union[Family, str]] = tuple(Family),
                    n_jobs=None) -> FitSelection:
    """Fit every family and keep the lowest AIC, with BIC deciding near-ties.

    Families with AIC within 2 of the minimum are ranked by BIC; remaining
    ties go to the first-listed family.
    """
    families = [Family(f) for f in families]
    if not families:
        raise InvalidArgumentError("No candidate families given")
    x = np.asarray(data, dtype=float).ravel()
    outcomes = parallel_map(_fit_or_error, [(x, f) for f in families], n_jobs=n_jobs)

    candidates, failures = [], {}
    for family, outcome in zip(families, outcomes):
        if isinstance(outcome, ParametricFit):
            candidates.append(outcome)
            logger.info(f"{family.value}: AIC={outcome.aic:.2f}, BIC={outcome.bic:.2f}")
        else:
            failures[family.value] = outcome
            logger.warning(f"{family.value} fit failed: {outcome}")
    if not candidates:
        raise EstimationError("Every baseline family failed to fit", failures)

    best = _pick(candidates)
    logger.info(f"Best baseline family: {best.family.value}")
    return FitSelection(best=best, candidates=candidates, failures=failures)


def _pick(candidates: List[ParametricFit], offsets=None) -> ParametricFit:
    offsets = offsets or [0.0] * len(candidates)
    aic = [fit.aic + o for fit, o in zip(candidates, offsets)]
    bic = [fit.bic + o for fit, o in zip(candidates, offsets)]
    near = [i for i, a in enumerate(aic) if a - min(aic) < AIC_TIE]
    return candidates[min(near, key=lambda i: (bic[i], i))]


def extrapolate_tail(fit: ParametricFit, probe_points) -> List[Tuple[float, float]]:
    """Family CDF at probe points, typically far below the fitting region"""
    x = np.atleast_1d(np.asarray(probe_points, dtype=float))
    return [(float(a), float(b)) for a, b in zip(x, fit.cdf(x))]


class BaselineBuilder:
    """Fits the baseline families on named fitting regions and keeps every selection"""

    AMPLITUDE_FAMILIES = (Family.RICIAN, Family.NAKAGAMI)

    def __init__(self, families: Sequence[Union[Family, str]] = tuple(Family), n_jobs=None):
        self.families = [Family(f) for f in families]
        self.n_jobs = n_jobs
        self.selections: Dict[str, FitSelection] = {}

    def build(self, name: str, power: np.ndarray) -> FitSelection:
        """Fit on normalized linear power; Rician and Nakagami see the amplitude sqrt(power)"""
        power = np.asarray(power, dtype=float).ravel()
        amplitude = to_amplitude(power)
        logger.info(f"Baseline '{name}': Rician/Nakagami fitted on amplitude of {power.size} power samples")
        tasks = [(amplitude if f in self.AMPLITUDE_FAMILIES else power, f) for f in self.families]
        outcomes = parallel_map(_fit_or_error, tasks, n_jobs=self.n_jobs)

        fits, failures = [], {}
        for family, outcome in zip(self.families, outcomes):
            if isinstance(outcome, ParametricFit):
                fits.append(outcome)
            else:
                failures[family.value] = outcome
                logger.warning(f"Baseline '{name}': {family.value} failed: {outcome}")
        if not fits:
            raise EstimationError(f"No baseline family could be fitted on '{name}'", failures)

        # amplitude likelihoods move to the power scale through the Jacobian of a = sqrt(p)
        jacobian = 2 * float(np.sum(np.log(2 * amplitude[amplitude > 0])))
        offsets = [jacobian if f.family in self.AMPLITUDE_FAMILIES else 0.0 for f in fits]
        selection = FitSelection(best=_pick(fits, offsets), candidates=fits, failures=failures)
        self.selections[name] = selection
        logger.info(f"Baseline '{name}': best family {selection.best.family.value}")
        return selection
