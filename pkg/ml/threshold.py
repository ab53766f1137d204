"""Optimum threshold selection: mean residual life and parameter stability.

Both methods look for the highest threshold below which a curve is linear in
u. A prefix counts as linear when its least squares R^2 reaches r2_min, or
when its departure from a straight line is within sampling noise according to
a generalised least squares lack-of-fit test. Only the unbroken run of linear
prefixes starting at the lowest threshold counts.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from ml.gpd import excesses, fit_gpd, modified_scale
from processing.series import TimeSeries, is_iid
from utils.exceptions import EstimationError, EvtError, InsufficientDataError, InvalidArgumentError
from utils.scheduling import parallel_map

logger = logging.getLogger(__name__)

MIN_LINE_POINTS = 3
LACK_OF_FIT_ALPHA = 1e-4


class Method(str, Enum):
    MRL = "mrl"
    STABILITY = "stability"
    COMBINED = "combined"


@dataclass
class ThresholdConfig:
    n_points: int = 40
    r2_min: float = 0.95
    k_min: int = 30
    grid: str = "range"          # "range": min..mean, "quantile": by tail mass
    p_low: float = 0.003
    p_high: float = 0.30
    iid_max_lag: int = 50
    n_jobs: Optional[int] = None

    def validate(self) -> None:
        if self.n_points < 3:
            raise InvalidArgumentError("Threshold grid needs at least 3 points")
        if not 0 < self.r2_min < 1:
            raise InvalidArgumentError(f"r2_min must lie in (0, 1), got {self.r2_min}")
        if self.grid not in ("range", "quantile"):
            raise InvalidArgumentError(f"Unknown threshold grid kind '{self.grid}'")


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    lack_of_fit_p: Optional[float] = None


@dataclass
class ThresholdScan:
    """Per-threshold table; one row per grid value, ascending in u"""

    table: pd.DataFrame

    @property
    def grid(self) -> np.ndarray:
        return self.table["u"].to_numpy()

    def usable(self) -> pd.DataFrame:
        return self.table[self.table["status"] == "ok"]

    def to_csv(self) -> str:
        return self.table.to_csv(index=False)


@dataclass
class ThresholdDecision:
    u0: Optional[float]
    method: Method
    r2_mrl: Optional[float] = None
    r2_xi: Optional[float] = None
    r2_sigma_star: Optional[float] = None
    rationale: str = ""
    deferred: bool = False
    scan: Optional[ThresholdScan] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "u0": self.u0,
            "method": self.method.value,
            "r2_mrl": self.r2_mrl,
            "r2_xi": self.r2_xi,
            "r2_sigma_star": self.r2_sigma_star,
            "rationale": self.rationale,
            "deferred": self.deferred,
        }


def threshold_grid(series: TimeSeries, n_points: int = 40) -> np.ndarray:
    """Equally spaced thresholds from one step above the minimum up to the mean"""
    if n_points < 3:
        raise InvalidArgumentError(f"n_points must be >= 3, got {n_points}")
    low, high = float(series.samples.min()), float(series.samples.mean())
    if not high > low:
        raise InvalidArgumentError("Degenerate series: minimum equals mean")
    step = (high - low) / n_points
    grid = low + step * np.arange(1, n_points + 1)
    grid[-1] = high
    return grid


def quantile_threshold_grid(series: TimeSeries, n_points: int = 40,
                            p_low: float = 0.003, p_high: float = 0.30) -> np.ndarray:
    """Thresholds spanning a range of tail mass instead of a range of values"""
    if n_points < 3:
        raise InvalidArgumentError(f"n_points must be >= 3, got {n_points}")
    if not 0 < p_low < p_high < 1:
        raise InvalidArgumentError(f"Need 0 < p_low < p_high < 1, got {p_low}, {p_high}")
    grid = np.unique(np.quantile(series.samples, np.linspace(p_low, p_high, n_points)))
    if grid.size < 3:
        raise InvalidArgumentError("Degenerate series: too few distinct tail quantiles")
    return grid


def _clean_covariance(y_cov, size: int) -> Optional[np.ndarray]:
    cov = np.asarray(y_cov, dtype=float)
    if cov.shape not in ((size,), (size, size)):
        raise InvalidArgumentError(f"Noise variances must match {size} points, got shape {cov.shape}")
    if cov.ndim == 2:
        if np.isfinite(cov).all():
            return cov
        cov = np.diag(cov).copy()
    good = np.isfinite(cov) & (cov > 0)
    if not good.any():
        return None
    # unknown variances get the largest known one
    return np.where(good, cov, cov[good].max())


def lack_of_fit_pvalue(x, y, y_cov) -> Optional[float]:
    """Chi-square lack-of-fit p-value of a GLS line; y_cov holds variances or a full covariance"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cov = _clean_covariance(y_cov, x.size)
    if cov is None:
        return None
    design = sm.add_constant(x, has_constant="add")
    try:
        chi2 = float(sm.GLS(y, design, sigma=cov).fit().ssr)
    except np.linalg.LinAlgError:
        logger.debug("Singular noise covariance; falling back to its diagonal")
        chi2 = float(sm.WLS(y, design, weights=1.0 / np.diag(cov)).fit().ssr)
    return float(stats.chi2.sf(chi2, x.size - 2))


def fit_line_r2(x, y, y_cov=None, alpha: float = LACK_OF_FIT_ALPHA) -> LineFit:
    """Ordinary least squares line with its coefficient of determination.

    A constant y is a perfect line (R^2 = 1). When ``y_cov`` (noise variances,
    or the full noise covariance of correlated points) is given and the curve
    passes a lack-of-fit test at level ``alpha``, it is a line up to noise and
    R^2 is reported as 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < MIN_LINE_POINTS or x.size != y.size:
        raise InvalidArgumentError(f"Need at least {MIN_LINE_POINTS} paired points, got {x.size}")
    if np.ptp(x) == 0:
        raise InvalidArgumentError("Degenerate regression: all x values are equal")

    model = LinearRegression().fit(x.reshape(-1, 1), y)
    slope, intercept = float(model.coef_[0]), float(model.intercept_)

    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return LineFit(slope=0.0, intercept=float(y[0]), r2=1.0)
    p_value = None if y_cov is None else lack_of_fit_pvalue(x, y, y_cov)
    if p_value is not None and p_value >= alpha:
        return LineFit(slope=slope, intercept=intercept, r2=1.0, lack_of_fit_p=p_value)

    r2 = r2_score(y, model.predict(x.reshape(-1, 1)))
    return LineFit(slope=slope, intercept=intercept, r2=float(np.clip(r2, 0.0, 1.0)), lack_of_fit_p=p_value)


def prefix_r2(x, y, y_cov=None) -> np.ndarray:
    """R^2 of the regression over every prefix {x <= x_i}; NaN below 3 points"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cov = None if y_cov is None else np.asarray(y_cov, dtype=float)
    r2 = np.full(x.size, np.nan)
    for end in range(MIN_LINE_POINTS, x.size + 1):
        noise = None if cov is None else (cov[:end, :end] if cov.ndim == 2 else cov[:end])
        r2[end - 1] = fit_line_r2(x[:end], y[:end], noise).r2
    return r2


def mrl_covariance(se, k) -> np.ndarray:
    """Covariance of mean excesses at ascending thresholds.

    Excess sets are nested, so Cov(e_i, e_j) = se_i^2 k_i / k_j for u_i <= u_j.
    """
    se = np.asarray(se, dtype=float)
    k = np.asarray(k, dtype=float)
    index = np.arange(se.size)
    low, high = np.minimum.outer(index, index), np.maximum.outer(index, index)
    return (se ** 2 * k)[low] / k[high]


def _largest_linear_prefix(u: np.ndarray, r2: np.ndarray, r2_min: float) -> Tuple[Optional[float], Optional[int]]:
    if u.size < MIN_LINE_POINTS or not r2[MIN_LINE_POINTS - 1] >= r2_min:
        return None, None
    failing = np.flatnonzero(~(r2[MIN_LINE_POINTS - 1:] >= r2_min))
    index = u.size - 1 if failing.size == 0 else MIN_LINE_POINTS - 2 + int(failing[0])
    return float(u[index]), index


def mrl_curve(series: TimeSeries, grid, k_min: int = 30) -> pd.DataFrame:
    """Mean residual life pairs (u, e(u)) with a 95% band; sparse thresholds flagged"""
    rows = []
    for u in np.asarray(grid, dtype=float):
        y = excesses(series, u)
        k = int(y.size)
        mean = float(y.mean()) if k else np.nan
        se = float(y.std(ddof=1) / np.sqrt(k)) if k > 1 else np.nan
        rows.append({"u": u, "mean_excess": mean, "se": se,
                     "ci_low": mean - 1.96 * se, "ci_high": mean + 1.96 * se,
                     "k": k, "usable": k >= k_min})
    curve = pd.DataFrame(rows)

    n_usable = int(curve["usable"].sum())
    if n_usable < MIN_LINE_POINTS:
        raise InsufficientDataError(
            f"Only {n_usable} thresholds have >= {k_min} excesses; need {MIN_LINE_POINTS}")
    if n_usable < len(curve):
        logger.debug(f"{len(curve) - n_usable} thresholds below k_min={k_min} excluded from the MRL curve")
    return curve


def mrl_threshold(curve: pd.DataFrame, r2_min: float = 0.95) -> ThresholdDecision:
    points = curve[curve["usable"]] if "usable" in curve else curve
    u = points["u"].to_numpy()
    noise = None
    if "se" in points:
        se = points["se"].to_numpy()
        noise = mrl_covariance(se, points["k"]) if "k" in points else se ** 2
    r2 = prefix_r2(u, points["mean_excess"].to_numpy(), noise)

    if u.size >= MIN_LINE_POINTS and np.all(r2[MIN_LINE_POINTS - 1:] >= r2_min):
        return ThresholdDecision(
            u0=None, method=Method.MRL, r2_mrl=float(r2[-1]), deferred=True,
            rationale="mean excess is linear over the whole grid; optimum threshold "
                      "indistinguishable, use parameter stability")

    u0, index = _largest_linear_prefix(u, r2, r2_min)
    if u0 is None:
        return ThresholdDecision(u0=None, method=Method.MRL,
                                 rationale="mean excess is not linear even over the lowest thresholds")
    return ThresholdDecision(u0=u0, method=Method.MRL, r2_mrl=float(r2[index]),
                             rationale=f"mean excess linear below u={u0:.4g} (R^2={r2[index]:.3f})")


def _fit_at_threshold(task) -> dict:
    values, u, k_min = task
    y = excesses(values, u)
    k = int(y.size)
    record = {"u": u, "k": k, "mean_excess": float(y.mean()) if k else np.nan,
              "mean_excess_se": float(y.std(ddof=1) / np.sqrt(k)) if k > 1 else np.nan,
              "xi": np.nan, "sigma": np.nan, "sigma_star": np.nan,
              "se_xi": np.nan, "se_sigma_star": np.nan}
    if k < k_min:
        record["status"] = "insufficient-data"
        return record
    try:
        fit = fit_gpd(y, n_total=values.size, u=u)
    except EvtError as e:
        record["status"] = "estimation-failure"
        logger.debug(f"Fit at u={u:.4g} failed: {e}")
        return record
    record.update(xi=fit.params.xi, sigma=fit.params.sigma, sigma_star=modified_scale(fit),
                  se_xi=fit.se_xi, se_sigma_star=fit.se_modified_scale, status="ok")
    return record


def add_prefix_r2(table: pd.DataFrame) -> pd.DataFrame:
    """Prefix R^2 columns for mean excess, shape and modified scale over the usable rows"""
    table = table.copy()
    for column in ("r2_mrl_prefix", "r2_xi_prefix", "r2_sigma_star_prefix"):
        table[column] = np.nan
    ok = table["status"] == "ok"
    if ok.sum() >= MIN_LINE_POINTS:
        rows = table[ok]
        u = rows["u"].to_numpy()
        table.loc[ok, "r2_mrl_prefix"] = prefix_r2(u, rows["mean_excess"],
                                                   mrl_covariance(rows["mean_excess_se"], rows["k"]))
        table.loc[ok, "r2_xi_prefix"] = prefix_r2(u, rows["xi"], rows["se_xi"] ** 2)
        table.loc[ok, "r2_sigma_star_prefix"] = prefix_r2(u, rows["sigma_star"], rows["se_sigma_star"] ** 2)
    return table


def stability_curves(series: TimeSeries, grid, k_min: int = 30,
                     n_jobs: Optional[int] = None) -> ThresholdScan:
    """GPD fit at every grid threshold; failed fits are tagged, not fatal"""
    values = series.samples
    tasks = [(values, float(u), k_min) for u in np.asarray(grid, dtype=float)]
    records = parallel_map(_fit_at_threshold, tasks, n_jobs=n_jobs)
    table = pd.DataFrame(records).sort_values("u", ignore_index=True)

    n_ok = int((table["status"] == "ok").sum())
    if n_ok == 0:
        raise EstimationError("GPD fit failed at every threshold of the grid",
                              {"statuses": table["status"].value_counts().to_dict()})
    logger.info(f"Stability scan: {n_ok}/{len(table)} thresholds fitted")
    return ThresholdScan(table=add_prefix_r2(table))


def stability_threshold(scan: ThresholdScan, r2_min: float = 0.95) -> ThresholdDecision:
    rows = scan.usable()
    if len(rows) < MIN_LINE_POINTS:
        return ThresholdDecision(u0=None, method=Method.STABILITY,
                                 rationale=f"fewer than {MIN_LINE_POINTS} successful fits")
    u = rows["u"].to_numpy()
    # nested fits are positively correlated, so independent noise makes this test conservative
    r2_xi = prefix_r2(u, rows["xi"], rows["se_xi"] ** 2)
    r2_ss = prefix_r2(u, rows["sigma_star"], rows["se_sigma_star"] ** 2)
    both = np.minimum(r2_xi, r2_ss)

    u0, index = _largest_linear_prefix(u, both, r2_min)
    if u0 is None:
        return ThresholdDecision(u0=None, method=Method.STABILITY,
                                 rationale="shape and modified scale are not linear even over the lowest thresholds")
    return ThresholdDecision(u0=u0, method=Method.STABILITY, r2_xi=float(r2_xi[index]),
                             r2_sigma_star=float(r2_ss[index]),
                             rationale=f"shape and modified scale linear below u={u0:.4g}")


def build_grid(series: TimeSeries, cfg: ThresholdConfig) -> np.ndarray:
    if cfg.grid == "quantile":
        return quantile_threshold_grid(series, cfg.n_points, cfg.p_low, cfg.p_high)
    return threshold_grid(series, cfg.n_points)


def select_threshold(series: TimeSeries, cfg: Optional[ThresholdConfig] = None) -> ThresholdDecision:
    """Run both methods and combine them conservatively (lower of the two u0)"""
    cfg = cfg or ThresholdConfig()
    cfg.validate()

    max_lag = min(cfg.iid_max_lag, len(series) - 1)
    if max_lag >= 1 and not is_iid(series, max_lag):
        logger.warning("Threshold selection input does not look i.i.d.; remove dependency first")

    try:
        grid = build_grid(series, cfg)
    except InvalidArgumentError as e:
        return ThresholdDecision(u0=None, method=Method.COMBINED, rationale=str(e))

    try:
        mrl = mrl_threshold(mrl_curve(series, grid, cfg.k_min), cfg.r2_min)
    except InsufficientDataError as e:
        mrl = ThresholdDecision(u0=None, method=Method.MRL, rationale=str(e))

    scan = None
    try:
        scan = stability_curves(series, grid, cfg.k_min, cfg.n_jobs)
        stab = stability_threshold(scan, cfg.r2_min)
    except EvtError as e:
        stab = ThresholdDecision(u0=None, method=Method.STABILITY, rationale=str(e))

    r2 = dict(r2_mrl=mrl.r2_mrl, r2_xi=stab.r2_xi, r2_sigma_star=stab.r2_sigma_star)
    if mrl.u0 is not None and stab.u0 is not None:
        decision = ThresholdDecision(u0=min(mrl.u0, stab.u0), method=Method.COMBINED, **r2,
                                     rationale=f"{mrl.rationale}; {stab.rationale}")
    elif stab.u0 is not None:
        decision = ThresholdDecision(u0=stab.u0, method=Method.STABILITY, **r2,
                                     deferred=mrl.deferred, rationale=f"{mrl.rationale}; {stab.rationale}")
    elif mrl.u0 is not None:
        decision = ThresholdDecision(u0=mrl.u0, method=Method.MRL, **r2,
                                     rationale=f"{mrl.rationale}; {stab.rationale}")
    else:
        decision = ThresholdDecision(u0=None, method=Method.COMBINED, **r2, deferred=mrl.deferred,
                                     rationale=f"no threshold found: {mrl.rationale}; {stab.rationale}")
    decision.scan = scan
    logger.info(f"Threshold decision: u0={decision.u0} via {decision.method.value}")
    return decision
