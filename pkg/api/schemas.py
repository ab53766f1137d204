"""Pydantic schema of the analysis report; every report is validated before it is written"""
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class DiagnosticsSchema(BaseModel):
    iid: bool
    max_lag: int
    max_violation_fraction: float
    tolerance: float
    bound: float
    violating_lags: List[int]
    violating_lags_squared: List[int]


class DependencySchema(BaseModel):
    input: DiagnosticsSchema
    mode: Literal["none", "declustering", "arima_garch"]
    details: Dict = Field(default_factory=dict)


class ThresholdSchema(BaseModel):
    u0: Optional[float]
    method: str
    r2_mrl: Optional[float] = None
    r2_xi: Optional[float] = None
    r2_sigma_star: Optional[float] = None
    rationale: str = ""
    deferred: bool = False


class GpdFitSchema(BaseModel):
    xi: float
    xi_flipped: float
    sigma: float = Field(gt=0)
    sigma_star: float
    u: float
    k: int = Field(ge=2)
    n_total: int
    zeta_u: float = Field(gt=0, le=1)
    loglik: float
    se_xi: Optional[float] = None
    se_sigma: Optional[float] = None
    regular: bool


class MssdSchema(BaseModel):
    model_config = ConfigDict(extra="allow")

    verdict: Literal["feasible", "infeasible"]
    j0: Optional[int]
    sample_savings: Optional[int]
    required_increment: Optional[int]
    n: int
    n0: int
    alpha: float
    t_star: float
    t_sided: Literal["two", "one"]
    sizes: List[int]
    p_bar: List[Optional[float]]
    s: List[Optional[float]]
    lower_bound: List[Optional[float]]
    gains: Dict[str, Optional[float]]


class PlotSummarySchema(BaseModel):
    kind: Literal["pp", "qq"]
    k: int
    max_abs_dev: float
    rmse_dev: float


class ComparisonSchema(BaseModel):
    rmse: Dict[str, Optional[float]]
    baselines: Dict[str, Dict]
    composite: Dict


class ProvenanceSchema(BaseModel):
    config_hash: str = Field(min_length=64, max_length=64)
    seed: int
    version: str
    input: str


class AnalysisReportSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    status: Literal["complete", "collect more data", "failed"]
    exit_code: Literal[0, 1, 2]
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    required_increment: Optional[int] = None
    n: Optional[int] = None
    completed_stages: List[str]
    dependency: Optional[DependencySchema] = None
    threshold: Optional[ThresholdSchema] = None
    fit: Optional[GpdFitSchema] = None
    mssd: Optional[MssdSchema] = None
    validation: List[PlotSummarySchema] = Field(default_factory=list)
    comparison: Optional[ComparisonSchema] = None
    provenance: ProvenanceSchema
