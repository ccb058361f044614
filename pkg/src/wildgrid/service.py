"""Stateless JSON service over the analysis pipeline.

Every endpoint takes the full case inline and returns a self-contained
report, so the service holds no session state and horizontal scaling is
trivial. Case problems map to HTTP 400 with the parser's message;
simulation problems map to 422.
"""

from __future__ import annotations

import json
import math

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__
from .cutsets import feasibility_test, transfer_margin
from .dynamics import (
    SimeConfig,
    SimulationError,
    assess_stability,
    parse_fault_sequence,
    simulate_swing,
)
from .model import CaseError, Network, apply_dynamics_sidecar, parse_json_case, parse_matpower_case, serialize_network
from .redispatch import Contingency, run_cscopf
from .schemas import (
    CscopfRequest,
    CutsetReport,
    CostReport,
    EvalTscpResponse,
    EvalTscpRequest,
    FtRequest,
    FtResponse,
    HealthResponse,
    IterationReportModel,
    NetworkSummary,
    SensitivityRequest,
    SensitivityResponse,
    SimeParams,
    TdsRequest,
    TdsResponse,
    TrainTscpRequest,
    TrainTscpResponse,
    TscpMetricsReport,
    TscpModelReport,
    ValidateRequest,
    ValidateResponse,
    VerificationReport,
    CscopfResponse,
)
from .sensitivity import build_sensitivity, compute_ptdf
from .tscp import PerturbationSpec, TscpModel, build_dataset, evaluate, sample_loads, train_model

app = FastAPI(title="wildgrid", version=__version__)


def _load_case(req) -> Network:
    try:
        if req.case is not None:
            return parse_json_case(json.dumps(req.case))
        net = parse_matpower_case(req.case_matpower)
        if req.sidecar is not None:
            net = apply_dynamics_sidecar(net, json.dumps(req.sidecar))
        return net
    except CaseError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None


def _sequence(doc: dict):
    try:
        return parse_fault_sequence(json.dumps(doc))
    except CaseError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None


def _sime(params: SimeParams) -> SimeConfig:
    try:
        return SimeConfig(
            epsilon=params.epsilon,
            tau=params.tau,
            instability_angle_deg=params.instability_angle_deg,
        )
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None


def _summary(net: Network) -> NetworkSummary:
    return NetworkSummary(
        buses=len(net.buses),
        branches=len(net.branches),
        in_service_branches=len(net.in_service_branches),
        generators=len(net.generators),
        loads=len(net.loads),
        mva_base=net.mva_base,
        reference_bus=net.reference_bus,
        total_generation_mw=net.total_generation_mw,
        total_load_mw=net.total_load_mw,
        is_connected=net.is_connected,
    )


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(version=__version__)


@app.post("/validate", response_model=ValidateResponse)
def validate(req: ValidateRequest) -> ValidateResponse:
    try:
        if req.case is not None:
            net = parse_json_case(json.dumps(req.case))
        else:
            net = parse_matpower_case(req.case_matpower)
            if req.sidecar is not None:
                net = apply_dynamics_sidecar(net, json.dumps(req.sidecar))
    except CaseError as exc:
        return ValidateResponse(valid=False, error=str(exc))
    return ValidateResponse(valid=True, summary=_summary(net))


@app.post("/sensitivity", response_model=SensitivityResponse)
def sensitivity(req: SensitivityRequest) -> SensitivityResponse:
    net = _load_case(req)
    try:
        sens = build_sensitivity(net)
        ptdf = sens.ptdf if req.ref_bus is None else compute_ptdf(net, req.ref_bus)
    except (CaseError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None
    lodf = [[None if math.isnan(v) else v for v in row] for row in sens.lodf.tolist()]
    return SensitivityResponse(
        branch_ids=list(sens.branch_ids),
        bus_ids=list(sens.bus_ids),
        ref_bus=req.ref_bus if req.ref_bus is not None else net.reference_bus,
        ptdf=ptdf.tolist(),
        lodf=lodf,
        bridge_branches=sorted(sens.bridge_branches),
        base_flows_mw=sens.base_flows_mw.tolist(),
    )


def _cut_report(cut) -> CutsetReport:
    return CutsetReport(
        branches=sorted(cut.branches),
        side_a=sorted(cut.side_a),
        side_b=sorted(cut.side_b),
        aggregate_flow_mw=cut.aggregate_flow_mw,
        aggregate_limit_mw=cut.aggregate_limit_mw,
        utilization=cut.utilization,
        transfer_margin_mw=transfer_margin(cut),
        saturated=cut.is_saturated,
    )


@app.post("/ft", response_model=FtResponse)
def ft(req: FtRequest) -> FtResponse:
    net = _load_case(req)
    try:
        result = feasibility_test(net, frozenset(req.outages), req.utilization_threshold)
    except (CaseError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None
    flows = None
    if result.flows is not None:
        flows = {bid: float(f) for bid, f in zip(result.flows.branch_ids, result.flows.flows_mw)}
    return FtResponse(
        outages=sorted(result.outages),
        islanded=result.islanded,
        islands=[sorted(i) for i in result.islands],
        cutsets=[_cut_report(c) for c in result.cutsets],
        flows_mw=flows,
        passed=result.passed,
    )


@app.post("/tds", response_model=TdsResponse)
def tds(req: TdsRequest) -> TdsResponse:
    net = _load_case(req)
    seq = _sequence(req.sequence)
    try:
        traj = simulate_swing(net, seq, dt=req.dt, t_end=req.t_end)
        res = assess_stability(traj, net, _sime(req.sime))
    except (SimulationError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    times = angles = None
    if req.include_trajectory:
        stride = max(1, req.trajectory_stride)
        times = traj.times[::stride].tolist()
        angles = traj.angles_deg()[:, ::stride].tolist()
    return TdsResponse(
        tsi=res.tsi,
        delta_max_deg=res.delta_max_deg,
        stable=res.stable,
        critical_machines=sorted(res.critical_machines),
        non_critical_machines=sorted(res.non_critical_machines),
        eta=res.eta,
        transfer_mw=res.transfer_mw,
        extrapolated=res.extrapolated,
        machine_ids=list(traj.machine_ids),
        times_s=times,
        angles_deg=angles,
    )


def _model_report(model: TscpModel) -> TscpModelReport:
    return TscpModelReport(
        theta=list(model.theta),
        theta0=model.theta0,
        contingency_id=model.contingency_id,
        n=model.n,
        seed=model.seed,
        load_ids=list(model.load_ids),
        cm=list(model.cm),
        ridge_used=model.ridge_used,
    )


def _metrics_report(metrics) -> TscpMetricsReport:
    return TscpMetricsReport(
        rmse=metrics.rmse, r2=metrics.r2, robustness=metrics.robustness, mbd=metrics.mbd, n=metrics.n
    )


@app.post("/train-tscp", response_model=TrainTscpResponse)
def train_tscp(req: TrainTscpRequest) -> TrainTscpResponse:
    net = _load_case(req)
    seq = _sequence(req.sequence)
    try:
        spec = PerturbationSpec(sigma=req.sigma, truncation_sigmas=req.truncation_sigmas)
        model, dataset = train_model(
            net,
            seq,
            contingency_id=req.contingency_id,
            n=req.n,
            seed=req.seed,
            spec=spec,
            sime_cfg=_sime(req.sime),
            dt=req.dt,
            t_end=req.t_end,
        )
    except (SimulationError, CaseError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    ok = dataset.ok_rows
    metrics = evaluate(model, dataset.x[ok], dataset.y[ok])
    return TrainTscpResponse(
        model=_model_report(model),
        stable_rows=sum(1 for s in dataset.status if s == "stable"),
        unstable_rows=sum(1 for s in dataset.status if s == "unstable"),
        failed_rows=sum(1 for s in dataset.status if s == "failed"),
        metrics=_metrics_report(metrics),
    )


@app.post("/eval-tscp", response_model=EvalTscpResponse)
def eval_tscp(req: EvalTscpRequest) -> EvalTscpResponse:
    net = _load_case(req)
    seq = _sequence(req.sequence)
    try:
        model = TscpModel.from_json(json.dumps(req.model))
        spec = PerturbationSpec()
        samples = sample_loads(net, spec, req.n, req.seed)
        dataset = build_dataset(net, samples, seq, _sime(req.sime), dt=req.dt, t_end=req.t_end)
        ok = dataset.ok_rows
        if not ok.any():
            raise SimulationError("all evaluation rows failed to simulate")
        metrics = evaluate(model, dataset.x[ok], dataset.y[ok], noise_level=req.noise_level, seed=req.seed + 1)
    except CaseError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None
    except (SimulationError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    return EvalTscpResponse(metrics=_metrics_report(metrics))


@app.post("/cscopf", response_model=CscopfResponse)
def cscopf(req: CscopfRequest) -> CscopfResponse:
    net = _load_case(req)
    seq = _sequence(req.sequence)
    model = None
    if req.model is not None:
        try:
            model = TscpModel.from_json(json.dumps(req.model))
        except CaseError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
    try:
        sol = run_cscopf(
            net,
            Contingency(id=req.contingency_id, sequence=seq),
            mode=req.mode,
            model=model,
            sime_cfg=_sime(req.sime),
            dt=req.dt,
            t_end=req.t_end,
            max_rounds=req.max_rounds,
            skip_bridge_outages=req.skip_bridge_outages,
        )
    except CaseError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None
    except (SimulationError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    return CscopfResponse(
        mode=sol.mode,
        status=sol.status,
        gen_ids=list(sol.gen_ids),
        load_ids=list(sol.load_ids),
        delta_p_mw=list(sol.delta_p_mw),
        delta_l_mw=list(sol.delta_l_mw),
        total_shed_mw=sol.total_shed_mw,
        objective=None if sol.status == "infeasible" or math.isnan(sol.objective) else sol.objective,
        cost=None
        if sol.cost is None
        else CostReport(
            base=sol.cost.base, total=sol.cost.total, delta=sol.cost.delta, shed_penalty=sol.cost.shed_penalty
        ),
        iterations=[
            IterationReportModel(
                round=it.round,
                qp_status=it.qp_status,
                objective=None if it.objective is None or math.isnan(it.objective) else it.objective,
                violations=list(it.violations),
                constraints_added=list(it.constraints_added),
                tsi=it.tsi,
            )
            for it in sol.iterations
        ],
        verification=None
        if sol.verification is None
        else VerificationReport(
            tsi=sol.verification.tsi,
            stable=sol.verification.stable,
            saturated_cutsets=[list(k) for k in sol.verification.saturated_cutsets],
            max_cut_utilization=sol.verification.max_cut_utilization,
            shed_mw=sol.verification.shed_mw,
            transfer_mw=sol.verification.transfer_mw,
            critical_machines=list(sol.verification.critical_machines),
        ),
        infeasible_rows=list(sol.infeasible_rows),
        solve_time_s=sol.solve_time_s,
    )
