"""Reproducible synthetic series with known tail parameters.

Randomness is counter based: the uniforms of block b of family f under seed s
come from a Philox stream keyed by (s, f, b), so output never depends on the
order in which blocks are produced.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import signal, stats

from processing.series import TimeSeries, Unit
from utils.exceptions import InvalidArgumentError
from utils.scheduling import parallel_map

logger = logging.getLogger(__name__)

BLOCK_SIZE = 1 << 16


class SyntheticFamily(str, Enum):
    GPD_TAIL_SPLICE = "gpd_tail_splice"
    EXPONENTIAL = "exponential"
    WEIBULL = "weibull"
    RICIAN = "rician"
    RAYLEIGH = "rayleigh"
    ARMA_GJR = "arma_gjr"
    WHITE_NOISE = "white_noise"


_FAMILY_ID = {family: i for i, family in enumerate(SyntheticFamily)}

DEFAULTS: Dict[SyntheticFamily, Dict[str, Any]] = {
    SyntheticFamily.GPD_TAIL_SPLICE: {"xi": 0.1, "sigma": 1.0, "u_star": -2.0, "zeta": None,
                                      "body_loc": 0.0, "body_scale": 1.0, "cluster_width": 1, "cluster_gap": 0},
    SyntheticFamily.EXPONENTIAL: {"scale": 1.0},
    SyntheticFamily.WEIBULL: {"shape": 2.0, "scale": 1.0},
    SyntheticFamily.RICIAN: {"nu": 1.0, "sigma": 1.0},
    SyntheticFamily.RAYLEIGH: {"sigma": 1.0},
    SyntheticFamily.ARMA_GJR: {"c": 0.0, "ar": [0.5, -0.2], "ma": [0.3, 0.1], "k": 0.05, "gamma": 0.85,
                               "phi": 0.06, "psi": 0.03, "burn_in": 1000},
    SyntheticFamily.WHITE_NOISE: {"loc": 0.0, "scale": 1.0},
}


@dataclass
class SyntheticSpec:
    family: SyntheticFamily
    n: int
    seed: int = 0
    params: Dict[str, Any] = field(default_factory=dict)
    unit: Optional[Unit] = None

    def __post_init__(self):
        self.family = SyntheticFamily(self.family)
        unknown = set(self.params) - set(DEFAULTS[self.family])
        if unknown:
            raise InvalidArgumentError(f"Unknown {self.family.value} parameters: {sorted(unknown)}")
        if self.n < 1:
            raise InvalidArgumentError(f"n must be >= 1, got {self.n}")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be nonnegative")

    def resolved(self) -> Dict[str, Any]:
        return {**DEFAULTS[self.family], **self.params}


def _block(task) -> np.ndarray:
    seed, family_id, block, size, columns = task
    bitgen = np.random.Philox(np.random.SeedSequence([seed, family_id, block]))
    # exact zeros would map to infinite quantiles
    return np.maximum(np.random.Generator(bitgen).random((size, columns)), 1e-300)


def uniform_stream(n: int, seed: int, family: SyntheticFamily, columns: int = 1,
                   n_jobs: Optional[int] = 1) -> np.ndarray:
    """(n, columns) uniforms on [0, 1), built block by block"""
    sizes = [min(BLOCK_SIZE, n - start) for start in range(0, n, BLOCK_SIZE)]
    tasks = [(seed, _FAMILY_ID[family], b, size, columns) for b, size in enumerate(sizes)]
    return np.vstack(parallel_map(_block, tasks, n_jobs=n_jobs))


def _positive(params: Dict[str, Any], *names: str) -> None:
    for name in names:
        if not params[name] > 0:
            raise InvalidArgumentError(f"Parameter {name} must be positive, got {params[name]}")


def _gpd_excess(u: np.ndarray, xi: float, sigma: float) -> np.ndarray:
    if abs(xi) < 1e-8:
        return -sigma * np.log1p(-u)
    return sigma / xi * np.expm1(-xi * np.log1p(-u))


def _splice(params: Dict[str, Any], uniforms: np.ndarray) -> Tuple[np.ndarray, Dict[str, Any]]:
    _positive(params, "sigma", "body_scale")
    width, gap = int(params["cluster_width"]), int(params["cluster_gap"])
    if width < 1 or gap < 0:
        raise InvalidArgumentError(f"Need cluster_width >= 1 and cluster_gap >= 0, got {width}, {gap}")
    u_star, loc, scale = params["u_star"], params["body_loc"], params["body_scale"]
    body_below = stats.norm.cdf(u_star, loc, scale)
    zeta = body_below if params["zeta"] is None else params["zeta"]
    if not 0 < zeta < 1:
        raise InvalidArgumentError(f"Tail probability zeta must lie in (0, 1), got {zeta}")

    def body(p: np.ndarray) -> np.ndarray:
        # normal truncated to [u_star, inf) by inverse transform
        return stats.norm.ppf(body_below + p * (1 - body_below), loc, scale)

    # each base value is one block: `width` members, `gap` body samples after each
    period = gap + 1
    block = width * period
    n = uniforms.shape[0]
    count = -(-n // block)
    pick, value, jitter = uniforms[:count, 0], uniforms[:count, 1], uniforms[:, 2]
    tail = pick < zeta
    base = np.empty(count)
    base[tail] = u_star - _gpd_excess(value[tail], params["xi"], params["sigma"])
    base[~tail] = body(value[~tail])

    slot = np.arange(n) % block
    member = slot % period == 0
    x = np.empty(n)
    x[member] = base[np.flatnonzero(member) // block]
    x[~member] = body(jitter[~member])
    # members sit above their cluster's first value, which stays the minimum
    follower = member & (slot >= period)
    x[follower] += -0.1 * params["sigma"] * np.log1p(-jitter[follower])

    truth = {"xi": params["xi"], "xi_flipped": -params["xi"], "sigma": params["sigma"], "u_star": u_star,
             "zeta": zeta, "sigma_star": params["sigma"] + params["xi"] * u_star, "cluster_width": width,
             "cluster_gap": gap}
    return x, truth


def _arma_gjr(params: Dict[str, Any], uniforms: np.ndarray) -> np.ndarray:
    ar, ma = np.asarray(params["ar"], dtype=float), np.asarray(params["ma"], dtype=float)
    k, gamma, phi, psi = params["k"], params["gamma"], params["phi"], params["psi"]
    if not (k > 0 and gamma >= 0 and phi >= abs(psi) and gamma + phi + abs(psi) < 1):
        raise InvalidArgumentError("GJR parameters violate positivity or stationarity")
    if ar.size and np.any(np.abs(np.roots(np.r_[1.0, -ar])) >= 1):
        raise InvalidArgumentError("AR coefficients are not stationary")

    burn = int(params["burn_in"])
    z = stats.norm.ppf(uniforms[:, 0])
    eps = np.empty(z.size)
    variance = k / (1 - gamma - phi)
    previous = 0.0
    for t in range(z.size):
        variance = k + gamma * variance + (phi - psi * np.sign(previous)) * previous ** 2
        previous = eps[t] = np.sqrt(variance) * z[t]

    mean = params["c"] / (1 - ar.sum()) if ar.size else params["c"]
    x = mean + signal.lfilter(np.r_[1.0, ma], np.r_[1.0, -ar], eps)
    return x[burn:]


def generate(spec: SyntheticSpec, n_jobs: Optional[int] = 1) -> Tuple[TimeSeries, Dict[str, Any]]:
    """Series plus a ground-truth record of the generating parameters"""
    params = spec.resolved()
    family = spec.family
    truth: Dict[str, Any] = {"family": family.value, "seed": spec.seed, "n": spec.n, **params}
    unit = spec.unit or (Unit.DBM if family in (SyntheticFamily.GPD_TAIL_SPLICE, SyntheticFamily.WHITE_NOISE,
                                                 SyntheticFamily.ARMA_GJR) else Unit.DIMENSIONLESS)

    if family is SyntheticFamily.GPD_TAIL_SPLICE:
        x, tail = _splice(params, uniform_stream(spec.n, spec.seed, family, 3, n_jobs))
        truth.update(tail)
    elif family is SyntheticFamily.ARMA_GJR:
        x = _arma_gjr(params, uniform_stream(spec.n + int(params["burn_in"]), spec.seed, family, 1, n_jobs))
    else:
        u = uniform_stream(spec.n, spec.seed, family, 2, n_jobs)
        if family is SyntheticFamily.EXPONENTIAL:
            _positive(params, "scale")
            x = -params["scale"] * np.log1p(-u[:, 0])
        elif family is SyntheticFamily.WEIBULL:
            _positive(params, "shape", "scale")
            x = params["scale"] * (-np.log1p(-u[:, 0])) ** (1 / params["shape"])
        elif family is SyntheticFamily.RAYLEIGH:
            _positive(params, "sigma")
            x = params["sigma"] * np.sqrt(-2 * np.log1p(-u[:, 0]))
        elif family is SyntheticFamily.RICIAN:
            _positive(params, "sigma")
            if params["nu"] < 0:
                raise InvalidArgumentError("Rician nu must be nonnegative")
            z = stats.norm.ppf(u)
            x = np.hypot(params["nu"] + params["sigma"] * z[:, 0], params["sigma"] * z[:, 1])
        else:
            _positive(params, "scale")
            x = params["loc"] + params["scale"] * stats.norm.ppf(u[:, 0])

    logger.info(f"Generated {spec.n} samples of {family.value} (seed {spec.seed})")
    return TimeSeries(samples=x, unit=unit), truth
