"""Pydantic request/response models for the JSON service.

Requests carry a grid case inline, either in the native JSON shape (case)
or as MATPOWER-format text plus an optional dynamics sidecar
(case_matpower / sidecar). Responses are plain data, NaN-free, and stamped
with the report schema version.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import SCHEMA_VERSION


class _Request(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CaseEnvelope(_Request):
    case: dict | None = None
    case_matpower: str | None = None
    sidecar: dict | None = None

    @model_validator(mode="after")
    def _one_case(self):
        if (self.case is None) == (self.case_matpower is None):
            raise ValueError("provide exactly one of 'case' or 'case_matpower'")
        if self.case is not None and self.sidecar is not None:
            raise ValueError("'sidecar' only applies to 'case_matpower'")
        return self


class ValidateRequest(CaseEnvelope):
    pass


class SensitivityRequest(CaseEnvelope):
    ref_bus: int | None = None


class FtRequest(CaseEnvelope):
    outages: list[int] = Field(default_factory=list)
    utilization_threshold: float = 1.0


class SimeParams(_Request):
    epsilon: float = 1.0
    tau: float = 0.05
    instability_angle_deg: float = 360.0


class TdsRequest(CaseEnvelope):
    sequence: dict
    dt: float = 1e-3
    t_end: float = 5.0
    sime: SimeParams = Field(default_factory=SimeParams)
    include_trajectory: bool = False
    trajectory_stride: int = 10


class TrainTscpRequest(CaseEnvelope):
    sequence: dict
    contingency_id: str
    n: int
    seed: int
    sigma: float = 0.05
    truncation_sigmas: float = 3.0
    dt: float = 1e-3
    t_end: float = 5.0
    sime: SimeParams = Field(default_factory=SimeParams)


class EvalTscpRequest(CaseEnvelope):
    sequence: dict
    model: dict
    n: int
    seed: int
    noise_level: float = 0.0
    dt: float = 1e-3
    t_end: float = 5.0
    sime: SimeParams = Field(default_factory=SimeParams)


class CscopfRequest(CaseEnvelope):
    sequence: dict
    contingency_id: str = "contingency"
    mode: str = "cscopf"
    model: dict | None = None
    dt: float = 1e-3
    t_end: float = 5.0
    max_rounds: int = 10
    skip_bridge_outages: bool = False
    sime: SimeParams = Field(default_factory=SimeParams)


# -- responses ---------------------------------------------------------------


class _Response(BaseModel):
    schema_version: int = SCHEMA_VERSION


class HealthResponse(_Response):
    status: str = "ok"
    version: str


class NetworkSummary(BaseModel):
    buses: int
    branches: int
    in_service_branches: int
    generators: int
    loads: int
    mva_base: float
    reference_bus: int
    total_generation_mw: float
    total_load_mw: float
    is_connected: bool


class ValidateResponse(_Response):
    valid: bool
    error: str | None = None
    summary: NetworkSummary | None = None


class SensitivityResponse(_Response):
    branch_ids: list[int]
    bus_ids: list[int]
    ref_bus: int
    ptdf: list[list[float]]
    lodf: list[list[float | None]]  # None marks bridge columns
    bridge_branches: list[int]
    base_flows_mw: list[float]


class CutsetReport(BaseModel):
    branches: list[int]
    side_a: list[int]
    side_b: list[int]
    aggregate_flow_mw: float
    aggregate_limit_mw: float
    utilization: float
    transfer_margin_mw: float
    saturated: bool


class FtResponse(_Response):
    outages: list[int]
    islanded: bool
    islands: list[list[int]]
    cutsets: list[CutsetReport]
    flows_mw: dict[int, float] | None
    passed: bool


class TdsResponse(_Response):
    tsi: float
    delta_max_deg: float
    stable: bool
    critical_machines: list[int]
    non_critical_machines: list[int]
    eta: float
    transfer_mw: float
    extrapolated: bool
    machine_ids: list[int]
    times_s: list[float] | None = None
    angles_deg: list[list[float]] | None = None


class TscpModelReport(BaseModel):
    theta: list[float]
    theta0: float
    contingency_id: str
    n: int
    seed: int
    load_ids: list[int]
    cm: list[int]
    ridge_used: bool


class TscpMetricsReport(BaseModel):
    rmse: float
    r2: float
    robustness: float
    mbd: float
    n: int


class TrainTscpResponse(_Response):
    model: TscpModelReport
    stable_rows: int
    unstable_rows: int
    failed_rows: int
    metrics: TscpMetricsReport


class EvalTscpResponse(_Response):
    metrics: TscpMetricsReport


class IterationReportModel(BaseModel):
    round: int
    qp_status: str
    objective: float | None
    violations: list[str]
    constraints_added: list[str]
    tsi: float | None


class VerificationReport(BaseModel):
    tsi: float
    stable: bool
    saturated_cutsets: list[list[int]]
    max_cut_utilization: float
    shed_mw: float
    transfer_mw: float
    critical_machines: list[int]


class CostReport(BaseModel):
    base: float
    total: float
    delta: float
    shed_penalty: float


class CscopfResponse(_Response):
    mode: str
    status: str
    gen_ids: list[int]
    load_ids: list[int]
    delta_p_mw: list[float]
    delta_l_mw: list[float]
    total_shed_mw: float
    objective: float | None
    cost: CostReport | None
    iterations: list[IterationReportModel]
    verification: VerificationReport | None
    infeasible_rows: list[str]
    solve_time_s: float
