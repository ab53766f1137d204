"""Minimum sample size determination.

Two-step bootstrap of the analysis series; for every first-step set and every
prefix size on the grid, K second-step sets give K return levels whose
normality is tested with Anderson-Darling. A size is sufficient once the lower
bound of the mean p-value stays above alpha for it and every larger size.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.stats.diagnostic import normal_ad

from ml.gpd import XI_REGULAR, excesses, fit_gpd, return_level
from ml.threshold import select_threshold
from processing.series import TimeSeries
from utils.exceptions import EvtError, InfeasibleError, InvalidArgumentError
from utils.scheduling import parallel_map

logger = logging.getLogger(__name__)

AD_MIN_SIZE = 8
_P_FLOOR = np.finfo(float).tiny
_P_CEIL = 1.0 - np.finfo(float).eps


class Verdict(str, Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


@dataclass
class MssdConfig:
    alpha: float = 0.05
    M: int = 20
    K: int = 50
    n0: Optional[int] = None
    grid_points: int = 15
    grid_stride: Optional[int] = None
    m: float = 1e6
    confidence: float = 0.95
    t_sided: str = "two"                  # "two" or "one"
    bound_scale: str = "standard_error"   # or "standard_deviation"
    k_min: int = 30
    missing_tolerance: float = 0.2
    seed: int = 0
    n_jobs: Optional[int] = None

    def validate(self) -> None:
        if not 0 < self.alpha < 1:
            raise InvalidArgumentError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.M < 2 or self.K < 2:
            raise InvalidArgumentError("M and K must both be >= 2")
        if self.K < AD_MIN_SIZE:
            raise InvalidArgumentError(f"K must be >= {AD_MIN_SIZE} for the normality test")
        if not 0 < self.confidence < 1:
            raise InvalidArgumentError(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.t_sided not in ("two", "one"):
            raise InvalidArgumentError(f"t_sided must be 'two' or 'one', got '{self.t_sided}'")
        if self.bound_scale not in ("standard_error", "standard_deviation"):
            raise InvalidArgumentError(f"Unknown bound_scale '{self.bound_scale}'")
        if self.grid_stride is not None and self.grid_stride < 1:
            raise InvalidArgumentError("grid_stride must be >= 1")
        if self.grid_points < 2:
            raise InvalidArgumentError("grid_points must be >= 2")
        if not self.m > 1:
            raise InvalidArgumentError(f"Return period m must exceed 1, got {self.m}")

    def t_star(self) -> float:
        q = 1 - (1 - self.confidence) / 2 if self.t_sided == "two" else self.confidence
        return float(stats.t.ppf(q, self.M - 1))


@dataclass
class MssdReport:
    sizes: List[int]
    p_bar: List[float]
    s: List[float]
    lower: List[float]
    missing_fraction: List[float]
    excluded: List[int]
    j0: Optional[int]
    gains: Dict[int, float]
    verdict: Verdict
    n: int
    n0: int
    u0: float
    exceedance_fraction: float
    alpha: float
    t_star: float
    t_sided: str
    bound_scale: str
    config: Dict = field(default_factory=dict, repr=False)

    @property
    def sample_savings(self) -> Optional[int]:
        return None if self.j0 is None else self.n - self.j0

    @property
    def required_increment(self) -> int:
        return math.ceil(0.1 * self.n0)

    def table(self) -> pd.DataFrame:
        table = pd.DataFrame({"j": self.sizes, "p_bar": self.p_bar, "s": self.s, "lower_bound": self.lower,
                              "missing_fraction": self.missing_fraction})
        table["excluded"] = table["j"].isin(self.excluded)
        table["satisfied"] = (table["lower_bound"] > self.alpha) & ~table["excluded"]
        table["gain"] = table["j"].map(self.gains)
        return table

    def to_csv(self) -> str:
        return self.table().to_csv(index=False)

    def to_dict(self) -> dict:
        def clean(values):
            return [float(v) if np.isfinite(v) else None for v in values]

        return {
            "verdict": self.verdict.value,
            "j0": self.j0,
            "sample_savings": self.sample_savings,
            "required_increment": None if self.verdict is Verdict.FEASIBLE else self.required_increment,
            "n": self.n,
            "n0": self.n0,
            "u0": self.u0,
            "exceedance_fraction": self.exceedance_fraction,
            "alpha": self.alpha,
            "t_star": self.t_star,
            "t_sided": self.t_sided,
            "bound_scale": self.bound_scale,
            "sizes": self.sizes,
            "p_bar": clean(self.p_bar),
            "s": clean(self.s),
            "lower_bound": clean(self.lower),
            "missing_fraction": self.missing_fraction,
            "excluded": self.excluded,
            "gains": {str(j): g for j, g in self.gains.items()},
            "config": self.config,
        }


def bootstrap_resample(series: TimeSeries, size: int, rng: np.random.Generator) -> TimeSeries:
    """Draw ``size`` samples with replacement"""
    if size < 1:
        raise InvalidArgumentError(f"Bootstrap size must be >= 1, got {size}")
    values = series.samples
    if values.size == 0:
        raise InvalidArgumentError("Cannot resample an empty series")
    return series.with_samples(values[rng.integers(0, values.size, size)])


def ad_normality_p(sample) -> float:
    """Anderson-Darling normality p-value with estimated mean and variance"""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < AD_MIN_SIZE:
        raise InvalidArgumentError(f"Normality test needs at least {AD_MIN_SIZE} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("Normality test input must be finite")
    if np.ptp(x) == 0:
        raise InvalidArgumentError("Normality test input has zero variance")
    _, p = normal_ad(x)
    return float(np.clip(p, _P_FLOOR, _P_CEIL))


def _exceedance_fraction(values: np.ndarray, u0: float) -> float:
    return float(np.mean(values < u0))


def _default_stride(n: int, points: int) -> int:
    return max(1, math.ceil(n / points))


def min_regular_size(series: TimeSeries, u0: float, k_min: int = 30, stride: Optional[int] = None,
                     quantile_anchored: bool = True) -> int:
    """Smallest prefix size whose tail fit has a regular shape (xi > -0.5).

    With ``quantile_anchored`` each prefix uses its own empirical quantile at
    the exceedance fraction of u0; otherwise u0 itself. Prefixes with fewer
    than k_min exceedances are skipped.
    """
    values = series.samples
    n = values.size
    stride = stride or _default_stride(n, 100)
    p0 = _exceedance_fraction(values, u0)
    if p0 == 0:
        raise InvalidArgumentError(f"No samples below u0={u0}")

    for size in np.unique(np.r_[np.arange(stride, n, stride), n]):
        prefix = values[:size]
        u = float(np.quantile(prefix, p0)) if quantile_anchored else u0
        y = excesses(prefix, u)
        if y.size < max(k_min, 2):
            continue
        try:
            fit = fit_gpd(y, n_total=int(size), u=u, compute_se=False)
        except EvtError:
            continue
        if fit.params.xi > XI_REGULAR:
            logger.info(f"Smallest regular prefix: {size} samples (xi={fit.params.xi:.3f})")
            return int(size)

    increment = math.ceil(0.1 * n)
    raise InfeasibleError(f"No prefix of the {n} samples yields a regular tail fit; "
                          f"increase by at least {increment} samples", required_increment=increment)


def size_grid(n: int, n0: int, cfg: MssdConfig) -> np.ndarray:
    if not 1 <= n0 <= n:
        raise InvalidArgumentError(f"n0 must lie in [1, {n}], got {n0}")
    stride = cfg.grid_stride or _default_stride(n - n0, cfg.grid_points - 1)
    return np.unique(np.r_[np.arange(n0, n, stride), n]).astype(int)


def _return_level_cell(y: np.ndarray, p0: float, m: float, k_min: int) -> float:
    u = float(np.quantile(y, p0))
    exc = excesses(y, u)
    if exc.size < k_min:
        return np.nan
    try:
        fit = fit_gpd(exc, n_total=y.size, u=u, compute_se=False)
        if not fit.regular:
            return np.nan
        return float(return_level(fit, m))
    except EvtError:
        return np.nan


def _size_cell(task) -> dict:
    """All K second-step sets for one (first-step set, size) pair"""
    series, set_index, j, p0, cfg = task
    # set 0 and draw 0 are the observed data; every other draw has its own stream
    if set_index == 0:
        x = series
    else:
        x = bootstrap_resample(series, len(series), np.random.default_rng([cfg.seed, set_index]))
    prefix = x.head(j)

    levels = np.empty(cfg.K)
    for k in range(cfg.K):
        if k == 0:
            y = prefix
        else:
            y = bootstrap_resample(prefix, j, np.random.default_rng([cfg.seed, set_index, j, k]))
        levels[k] = _return_level_cell(y.samples, p0, cfg.m, cfg.k_min)

    finite = levels[np.isfinite(levels)]
    p = np.nan
    if finite.size >= AD_MIN_SIZE and np.ptp(finite) > 0:
        p = ad_normality_p(finite)
    return {"set": set_index, "j": j, "p": p, "missing": int(cfg.K - finite.size)}


def _final_run_start(sizes: np.ndarray, satisfied: np.ndarray) -> Optional[int]:
    if satisfied.size == 0 or not satisfied[-1]:
        return None
    failing = np.flatnonzero(~satisfied)
    start = 0 if failing.size == 0 else failing[-1] + 1
    return int(sizes[start])


def mssd(series: TimeSeries, cfg: Optional[MssdConfig] = None, u0: Optional[float] = None) -> MssdReport:
    """Run the two-step bootstrap over the size grid and locate the sufficient size j0.

    ``u0`` is the optimum threshold chosen on the full series; when omitted it
    is selected here with the default threshold configuration.
    """
    cfg = cfg or MssdConfig()
    cfg.validate()
    values = series.samples
    n = values.size

    if u0 is None:
        decision = select_threshold(series)
        if decision.u0 is None:
            raise InvalidArgumentError(f"No optimum threshold for MSSD: {decision.rationale}")
        u0 = decision.u0

    p0 = _exceedance_fraction(values, u0)
    if p0 == 0:
        raise InvalidArgumentError(f"No samples below u0={u0}")
    floor = math.ceil(cfg.k_min / p0)
    n0 = cfg.n0
    if n0 is None:
        n0 = max(min_regular_size(series, u0, cfg.k_min, quantile_anchored=True), min(floor, n))
    elif n0 < floor:
        raise InvalidArgumentError(f"n0={n0} is below k_min/zeta_u = {floor}")

    sizes = size_grid(n, n0, cfg)
    logger.info(f"MSSD: n={n}, n0={n0}, {sizes.size} sizes, M={cfg.M}, K={cfg.K}, "
                f"exceedance fraction {p0:.4g}")
    tasks = [(series, set_index, int(j), p0, cfg) for set_index in range(cfg.M) for j in sizes]
    cells = pd.DataFrame(parallel_map(_size_cell, tasks, n_jobs=cfg.n_jobs))

    t_star = cfg.t_star()
    p_bar, s, lower, missing_fraction, excluded = [], [], [], [], []
    for j in sizes:
        rows = cells[cells["j"] == j]
        fraction = float(rows["missing"].sum() / (cfg.M * cfg.K))
        p = rows["p"].to_numpy(dtype=float)
        p = p[np.isfinite(p)]
        if fraction > cfg.missing_tolerance or p.size < 2:
            logger.warning(f"MSSD size {j} excluded: {fraction:.1%} of its fits missing")
            excluded.append(int(j))
            mean = sd = bound = np.nan
        else:
            mean, sd = float(p.mean()), float(p.std(ddof=0))
            scale = sd / np.sqrt(p.size) if cfg.bound_scale == "standard_error" else sd
            bound = mean - t_star * scale
        p_bar.append(mean)
        s.append(sd)
        lower.append(bound)
        missing_fraction.append(fraction)

    lower_arr = np.asarray(lower)
    satisfied = np.isfinite(lower_arr) & (np.nan_to_num(lower_arr, nan=-np.inf) > cfg.alpha)
    j0 = _final_run_start(sizes, satisfied)

    gains = {}
    if j0 is not None:
        s_j0 = s[int(np.flatnonzero(sizes == j0)[0])]
        gains = {int(j): float(s_j - s_j0) for j, s_j in zip(sizes, s) if j >= j0}
        logger.info(f"MSSD feasible: j0={j0}, {n - j0} samples could be saved")
    else:
        logger.info(f"MSSD infeasible: increase by at least {math.ceil(0.1 * n0)} samples")

    return MssdReport(
        sizes=[int(j) for j in sizes], p_bar=p_bar, s=s, lower=lower, missing_fraction=missing_fraction,
        excluded=excluded, j0=j0, gains=gains, verdict=Verdict.FEASIBLE if j0 is not None else Verdict.INFEASIBLE,
        n=n, n0=int(n0), u0=float(u0), exceedance_fraction=p0, alpha=cfg.alpha, t_star=t_star,
        t_sided=cfg.t_sided, bound_scale=cfg.bound_scale,
        config={k: v for k, v in cfg.__dict__.items() if k != "n_jobs"})
