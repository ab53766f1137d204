"""Cluster-minima extraction for dependent series and the (u, r) search"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ml.gpd import fit_gpd, modified_scale
from ml.threshold import ThresholdScan, add_prefix_r2, stability_threshold
from processing.series import TimeSeries, is_iid
from utils.exceptions import EvtError, InvalidArgumentError, NoFeasibleSelectionError
from utils.scheduling import parallel_map

logger = logging.getLogger(__name__)


@dataclass
class DeclusterConfig:
    u_grid: Optional[List[float]] = None
    r_grid: List[int] = field(default_factory=lambda: [0, 1, 2, 4, 8, 16, 32])
    n_points: int = 20
    r2_min: float = 0.95
    param_tolerance: float = 0.05
    se_multiple: float = 2.0
    k_min: int = 30
    iid_max_lag: int = 50
    n_jobs: Optional[int] = None

    def validate(self) -> None:
        if len(set(self.r_grid)) < 2 or min(self.r_grid) < 0:
            raise InvalidArgumentError("r_grid needs at least two distinct nonnegative integers")
        if not 0 < self.r2_min < 1:
            raise InvalidArgumentError(f"r2_min must lie in (0, 1), got {self.r2_min}")


@dataclass
class DeclusterResult:
    minima: Optional[TimeSeries]
    cluster_spans: List[Tuple[int, int]]
    u: float
    r: int

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_spans)


@dataclass
class DeclusterSelection:
    u: float
    r: int
    scan: pd.DataFrame = field(repr=False)
    result: Optional[DeclusterResult] = field(default=None, repr=False)


def decluster(series: TimeSeries, u: float, r: int) -> DeclusterResult:
    """Group sub-threshold samples into clusters and keep each cluster's minimum.

    A cluster opens at the first sample below u and survives up to r
    consecutive samples at or above u; a sub-threshold sample inside that
    window rejoins the cluster. Equivalently, two consecutive sub-threshold
    indices belong to the same cluster when at most r samples separate them.
    """
    if r < 0:
        raise InvalidArgumentError(f"Continuation gap r must be >= 0, got {r}")

    values = series.samples
    below = np.flatnonzero(values < u)
    if below.size == 0:
        return DeclusterResult(minima=None, cluster_spans=[], u=u, r=r)

    breaks = np.flatnonzero(np.diff(below) > r + 1) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [below.size])) - 1

    minima = np.minimum.reduceat(values[below], starts)
    spans = [(int(below[s]), int(below[e])) for s, e in zip(starts, ends)]
    return DeclusterResult(minima=series.with_samples(minima), cluster_spans=spans, u=u, r=r)


def _settled(row: pd.Series, following: pd.Series, tolerance: float, se_multiple: float) -> bool:
    """Both parameters agree across consecutive r, relatively or within sampling error"""
    for name, se_name in (("xi", "se_xi"), ("sigma_star", "se_sigma_star")):
        change = abs(following[name] - row[name])
        relative = change / max(abs(row[name]), abs(following[name]), np.finfo(float).tiny)
        se = np.nan_to_num(row[se_name], nan=0.0)
        if not (relative < tolerance or change <= se_multiple * se):
            return False
    return True


def _scan_cell(task) -> dict:
    series, u, r, k_min, max_lag = task
    result = decluster(series, u, r)
    record = {"u": u, "r": r, "k": result.n_clusters, "mean_excess": np.nan, "mean_excess_se": np.nan,
              "xi": np.nan, "sigma": np.nan, "sigma_star": np.nan, "se_xi": np.nan,
              "se_sigma_star": np.nan, "iid": False, "status": "insufficient-data"}
    if result.n_clusters < k_min:
        return record

    y = u - result.minima.samples
    record.update(mean_excess=float(y.mean()), mean_excess_se=float(y.std(ddof=1) / np.sqrt(y.size)))
    lag = min(max_lag, result.n_clusters // 4)
    record["iid"] = bool(is_iid(result.minima, lag)) if lag >= 1 else True
    try:
        fit = fit_gpd(y, n_total=len(series), u=u)
    except EvtError as e:
        record["status"] = "estimation-failure"
        logger.debug(f"Declustered fit at u={u:.4g}, r={r} failed: {e}")
        return record
    record.update(xi=fit.params.xi, sigma=fit.params.sigma, sigma_star=modified_scale(fit),
                  se_xi=fit.se_xi, se_sigma_star=fit.se_modified_scale, status="ok")
    return record


def select_decluster_params(series: TimeSeries, u_grid: Sequence[float], r_grid: Sequence[int],
                            r2_min: float = 0.95, param_tolerance: float = 0.05, k_min: int = 30,
                            iid_max_lag: int = 50, n_jobs: Optional[int] = None,
                            se_multiple: float = 2.0) -> DeclusterSelection:
    """Smallest r giving i.i.d. cluster minima with settled parameters, paired with its u.

    For every r the optimum u is the highest threshold below which the shape
    and modified scale of the declustered fits are linear in u. r is accepted
    when the minima at that u are i.i.d. and, moving to the next larger r at
    the same u, both parameters change by less than ``param_tolerance``
    (relative) or by at most ``se_multiple`` standard errors. The largest r
    of the grid has nothing to agree with and is never selected.
    """
    if not len(u_grid) or len(set(r_grid)) < 2:
        raise InvalidArgumentError("u_grid must be nonempty and r_grid needs at least two distinct values")
    if not 0 < r2_min < 1:
        raise InvalidArgumentError(f"r2_min must lie in (0, 1), got {r2_min}")

    u_values = sorted(float(u) for u in u_grid)
    r_values = sorted(set(int(r) for r in r_grid))
    tasks = [(series, u, r, k_min, iid_max_lag) for r in r_values for u in u_values]
    scan = pd.DataFrame(parallel_map(_scan_cell, tasks, n_jobs=n_jobs))

    per_r = {}
    for r in r_values:
        table = add_prefix_r2(scan[scan["r"] == r].drop(columns="r").reset_index(drop=True))
        decision = stability_threshold(ThresholdScan(table=table), r2_min)
        if decision.u0 is not None:
            per_r[r] = table[table["u"] == decision.u0].iloc[0]
    scan["selected_u"] = scan["r"].map({r: row["u"] for r, row in per_r.items()})

    for r, next_r in zip(r_values, r_values[1:]):
        row = per_r.get(r)
        if row is None or not row["iid"]:
            logger.debug(f"r={r} rejected: {'no linear threshold' if row is None else 'minima not i.i.d.'}")
            continue
        following = scan[(scan["r"] == next_r) & (scan["u"] == row["u"])].iloc[0]
        if following["status"] != "ok" or not _settled(row, following, param_tolerance, se_multiple):
            logger.debug(f"r={r} rejected: estimates still move at r={next_r}")
            continue
        u = float(row["u"])
        logger.info(f"Declustering selection: u={u:.4g}, r={r} ({int(row['k'])} clusters)")
        return DeclusterSelection(u=u, r=r, scan=scan, result=decluster(series, u, r))

    raise NoFeasibleSelectionError("No (u, r) pair gives i.i.d. cluster minima with stable parameters",
                                   scan=scan)
