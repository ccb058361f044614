"""Preventive redispatch against a wildfire contingency.

Builds a convex QP over generator shifts and load shed, then alternates
solve and verify: each round re-checks the candidate dispatch with a DC
feasibility screen and one time-domain simulation, and any violation adds
rows (never removes them) until the candidate verifies or the round cap is
hit. Three modes differ only in which violations they are allowed to
address: rtsced ignores both corridors and stability, tscopf adds stability
rows, cscopf adds both.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .cutsets import CutSet, cutset_constraint, feasibility_test, transfer_margin
from .dynamics import FaultSequence, SimeConfig, assess_stability, simulate_swing
from .model import CaseError, Network, apply_outage, with_operating_point
from .qp import LinearConstraint, QuadraticProgram, solve_qp
from .sensitivity import SensitivitySet, build_sensitivity
from .tscp import TscpModel, predict

__all__ = [
    "MODES",
    "Contingency",
    "DispatchCost",
    "dispatch_cost",
    "build_qp",
    "IterationReport",
    "Verification",
    "RedispatchSolution",
    "run_cscopf",
]

MODES = ("rtsced", "tscopf", "cscopf")


@dataclass(frozen=True)
class Contingency:
    """A named fault sequence; the branches it trips are the outage set."""

    id: str
    sequence: FaultSequence

    @property
    def outages(self) -> frozenset[int]:
        return self.sequence.tripped_branches


@dataclass(frozen=True)
class DispatchCost:
    base: float  # $/hr at the pre-redispatch set-points
    total: float  # $/hr at the shifted set-points, shed penalty included
    delta: float
    shed_penalty: float


def dispatch_cost(net: Network, delta_p, delta_l=None) -> DispatchCost:
    """Operating-cost change for a shift: F(p0 + dp) - F(p0) plus shed cost.

    Per generator the delta is c dp^2 + (b + 2 c p0) dp, the discrete change
    of the quadratic cost curve.
    """
    delta_p = np.asarray(delta_p, dtype=float)
    if delta_p.shape != (len(net.generators),):
        raise CaseError(f"expected {len(net.generators)} generator deltas, got {delta_p.shape}")
    base = sum(g.cost_a + g.cost_b * g.p0_mw + g.cost_c * g.p0_mw**2 for g in net.generators)
    new = sum(
        g.cost_a + g.cost_b * (g.p0_mw + d) + g.cost_c * (g.p0_mw + d) ** 2
        for g, d in zip(net.generators, delta_p)
    )
    shed = 0.0
    if delta_l is not None:
        delta_l = np.asarray(delta_l, dtype=float)
        if delta_l.shape != (len(net.loads),):
            raise CaseError(f"expected {len(net.loads)} load deltas, got {delta_l.shape}")
        shed = float(sum(l.shed_cost * d for l, d in zip(net.loads, delta_l)))
    return DispatchCost(base=base, total=new + shed, delta=new - base + shed, shed_penalty=shed)


def build_qp(
    net: Network,
    sens: SensitivitySet,
    cutsets: tuple[CutSet, ...] = (),
    tscf: float | None = None,
    cm: frozenset[int] = frozenset(),
    contingency_set: frozenset[int] = frozenset(),
    cutset_sens: SensitivitySet | None = None,
    monitored_branches: frozenset[int] | None = None,
    skip_bridge_outages: bool = False,
) -> QuadraticProgram:
    """Assemble the redispatch QP over [generator shifts, load sheds].

    Always present: cost objective, variable bounds, the power-balance row,
    and both flow-limit rows per monitored branch. Each outage in
    contingency_set adds post-outage rows per monitored branch via the line
    outage factors (a bridge outage is an error unless skip_bridge_outages,
    which drops its rows). cutsets adds one corridor row each (evaluated
    against cutset_sens when the cuts live on a different topology), and a
    positive tscf adds the stability row over the critical machines cm.
    """
    n_g = len(net.generators)
    n_l = len(net.loads)
    gen_cols = [sens.col_of(g.bus) for g in net.generators]
    load_cols = [sens.col_of(l.bus) for l in net.loads]

    quad = tuple(g.cost_c for g in net.generators) + (0.0,) * n_l
    lin = tuple(g.cost_b + 2.0 * g.cost_c * g.p0_mw for g in net.generators) + tuple(
        l.shed_cost for l in net.loads
    )
    lower = tuple(g.p_min_mw - g.p0_mw for g in net.generators) + (0.0,) * n_l
    upper = tuple(g.p_max_mw - g.p0_mw for g in net.generators) + tuple(
        l.l0_mw - l.l_min_mw for l in net.loads
    )
    var_names = tuple(f"dp:{g.id}" for g in net.generators) + tuple(f"dl:{l.id}" for l in net.loads)

    rows: list[LinearConstraint] = [
        LinearConstraint(
            coeffs=(1.0,) * (n_g + n_l),
            sense="==",
            rhs=0.0,
            tag="balance",
            provenance="balance",
        )
    ]

    if monitored_branches is None:
        monitored = [b for b in net.in_service_branches if b.id in sens.branch_ids]
    else:
        monitored = [
            b for b in net.in_service_branches if b.id in monitored_branches and b.id in sens.branch_ids
        ]

    def flow_row(bid: int):
        r = sens.row_of(bid)
        return tuple(float(sens.ptdf[r, c]) for c in gen_cols) + tuple(
            float(sens.ptdf[r, c]) for c in load_cols
        )

    for br in monitored:
        r = sens.row_of(br.id)
        f0 = float(sens.base_flows_mw[r])
        coeffs = flow_row(br.id)
        rows.append(
            LinearConstraint(coeffs, "<=", br.flow_limit_mw - f0, "branch-flow", f"branch-flow:{br.id}:max")
        )
        rows.append(
            LinearConstraint(coeffs, ">=", -br.flow_limit_mw - f0, "branch-flow", f"branch-flow:{br.id}:min")
        )

    for aid in sorted(contingency_set):
        if aid not in sens.branch_ids:
            raise CaseError(f"outage branch {aid} is not an in-service branch of this topology")
        if aid in sens.bridge_branches:
            if not skip_bridge_outages:
                raise CaseError(
                    f"outage branch {aid} is a bridge (islands the network); "
                    "pass skip_bridge_outages to drop its rows"
                )
            continue
        ra = sens.row_of(aid)
        f0_a = float(sens.base_flows_mw[ra])
        for br in monitored:
            if br.id == aid:
                continue
            ru = sens.row_of(br.id)
            lodf_ua = float(sens.lodf[ru, ra])
            f0_u = float(sens.base_flows_mw[ru])
            coeffs = tuple(
                float(sens.ptdf[ru, c] + lodf_ua * sens.ptdf[ra, c]) for c in gen_cols
            ) + tuple(float(sens.ptdf[ru, c] + lodf_ua * sens.ptdf[ra, c]) for c in load_cols)
            shift = f0_u + lodf_ua * f0_a
            rows.append(
                LinearConstraint(
                    coeffs, "<=", br.flow_limit_mw - shift, "n-1", f"n1:{br.id}|{aid}:max"
                )
            )
            rows.append(
                LinearConstraint(
                    coeffs, ">=", -br.flow_limit_mw - shift, "n-1", f"n1:{br.id}|{aid}:min"
                )
            )

    for cut in cutsets:
        rows.append(cutset_constraint(cut, cutset_sens or sens, net))

    if tscf is not None and tscf > 0.0:
        if not cm:
            raise CaseError("a stability transfer needs a non-empty critical-machine set")
        rows.append(_stability_row(net, cm, -float(tscf), "stability:0"))

    return QuadraticProgram(
        quad=quad,
        lin=lin,
        lower=lower,
        upper=upper,
        constraints=tuple(rows),
        var_names=var_names,
    )


def _stability_row(net: Network, cm, rhs: float, provenance: str) -> LinearConstraint:
    cm = frozenset(cm)
    unknown = cm - {g.id for g in net.generators}
    if unknown:
        raise CaseError(f"critical machines {sorted(unknown)} are not generators")
    coeffs = tuple(1.0 if g.id in cm else 0.0 for g in net.generators) + (0.0,) * len(net.loads)
    return LinearConstraint(coeffs=coeffs, sense="<=", rhs=rhs, tag="stability", provenance=provenance)


@dataclass(frozen=True)
class Verification:
    """Independent re-check of a candidate dispatch: DC corridor screen on
    the post-outage topology plus one full simulation."""

    tsi: float
    stable: bool
    saturated_cutsets: tuple[tuple[int, ...], ...]
    max_cut_utilization: float
    shed_mw: float
    transfer_mw: float
    critical_machines: tuple[int, ...]


@dataclass(frozen=True)
class IterationReport:
    round: int
    qp_status: str
    objective: float
    violations: tuple[str, ...]
    constraints_added: tuple[str, ...]
    tsi: float | None


@dataclass(frozen=True)
class RedispatchSolution:
    mode: str
    status: str  # optimal | infeasible | iteration-limit
    gen_ids: tuple[int, ...]
    load_ids: tuple[int, ...]
    delta_p_mw: tuple[float, ...]
    delta_l_mw: tuple[float, ...]
    objective: float
    cost: DispatchCost | None
    iterations: tuple[IterationReport, ...]
    verification: Verification | None
    infeasible_rows: tuple[str, ...]
    solve_time_s: float

    @property
    def total_shed_mw(self) -> float:
        return float(sum(self.delta_l_mw))


def _verify(net_cand, outages, sequence, sime_cfg, dt, t_end):
    ft = feasibility_test(net_cand, outages, utilization_threshold=1.0)
    if ft.islanded:
        raise CaseError("contingency islands the network; redispatch cannot verify")
    traj = simulate_swing(net_cand, sequence, dt=dt, t_end=t_end)
    res = assess_stability(traj, net_cand, sime_cfg)
    return ft, res


def _candidate_point(net: Network, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip solver output to component limits and repair the (tiny) balance
    drift the clip can introduce, spreading it over generator headroom."""
    n_g = len(net.generators)
    dp = np.clip(
        delta[:n_g],
        [g.p_min_mw - g.p0_mw for g in net.generators],
        [g.p_max_mw - g.p0_mw for g in net.generators],
    )
    dl = np.clip(delta[n_g:], 0.0, [l.l0_mw - l.l_min_mw for l in net.loads])
    residual = float(dp.sum() + dl.sum())  # want zero
    if residual != 0.0:
        if residual > 0.0:
            room = np.array([g.p0_mw + d - g.p_min_mw for g, d in zip(net.generators, dp)])
        else:
            room = np.array([g.p_max_mw - g.p0_mw - d for g, d in zip(net.generators, dp)])
        total = float(room.sum())
        if total > abs(residual):
            dp = dp - residual * room / total
    return dp, dl


def run_cscopf(
    net: Network,
    contingency: Contingency,
    mode: str = "cscopf",
    model: TscpModel | None = None,
    sime_cfg: SimeConfig | None = None,
    dt: float = 1e-3,
    t_end: float = 5.0,
    max_rounds: int = 10,
    qp_tol: float = 1e-6,
    skip_bridge_outages: bool = False,
) -> RedispatchSolution:
    """Solve-and-verify redispatch loop for one contingency.

    Round zero seeds the constraint set: cscopf screens the post-outage
    topology for saturated corridors and, given a trained transfer model,
    adds the predicted stability row; tscopf instead simulates the original
    dispatch and adds the measured row; rtsced adds nothing. Every round
    solves the QP, re-verifies the candidate (DC screen plus one
    simulation), and appends rows for violations the mode addresses; rows
    are deduplicated by provenance and never removed. Stops when the
    candidate verifies, the QP is infeasible, or max_rounds is hit.
    """
    if mode not in MODES:
        raise CaseError(f"mode must be one of {MODES}, got {mode!r}")
    sime_cfg = sime_cfg or SimeConfig()
    started = time.perf_counter()

    outages = contingency.outages
    post0 = apply_outage(net, outages) if outages else net
    if not post0.is_connected:
        raise CaseError(f"outage set {sorted(outages)} islands the network")

    sens_base = build_sensitivity(net)
    sens_post = build_sensitivity(post0)

    static_qp = build_qp(
        net,
        sens_base,
        contingency_set=outages,
        skip_bridge_outages=skip_bridge_outages,
    )
    dynamic: list[LinearConstraint] = []
    seen = {c.provenance for c in static_qp.constraints}

    def add_row(row: LinearConstraint) -> bool:
        if row.provenance in seen:
            return False
        seen.add(row.provenance)
        dynamic.append(row)
        return True

    p0 = np.array([g.p0_mw for g in net.generators])
    l0 = np.array([l.l0_mw for l in net.loads])
    gen_ids = tuple(g.id for g in net.generators)
    load_ids = tuple(l.id for l in net.loads)
    n_g = len(gen_ids)

    # round zero: seed the mode's constraint set
    seed_added: list[str] = []
    if mode == "cscopf":
        ft0 = feasibility_test(net, outages, utilization_threshold=1.0)
        if ft0.islanded:
            raise CaseError(f"outage set {sorted(outages)} islands the network")
        for cut in ft0.cutsets:
            if cut.is_saturated and add_row(cutset_constraint(cut, sens_post, net)):
                seed_added.append(dynamic[-1].provenance)
        if model is not None and model.cm:
            tscf0 = predict(model, _loads_for_model(net, model))
            if tscf0 > 0.0:
                row = _stability_row(net, frozenset(model.cm), -tscf0, f"stability:{contingency.id}:r0")
                if add_row(row):
                    seed_added.append(row.provenance)
    elif mode == "tscopf":
        traj0 = simulate_swing(net, contingency.sequence, dt=dt, t_end=t_end)
        res0 = assess_stability(traj0, net, sime_cfg)
        if not res0.stable and res0.transfer_mw > 0.0:
            row = _stability_row(
                net, res0.critical_machines, -res0.transfer_mw, f"stability:{contingency.id}:r0"
            )
            if add_row(row):
                seed_added.append(row.provenance)

    addressable = {"rtsced": frozenset(), "tscopf": frozenset(["stability"]), "cscopf": frozenset(["stability", "cutset"])}[mode]

    reports: list[IterationReport] = []
    status = "iteration-limit"
    infeasible_rows: tuple[str, ...] = ()
    delta = np.zeros(n_g + len(load_ids))
    verification: Verification | None = None
    warm = None

    for rnd in range(1, max_rounds + 1):
        qp = replace(static_qp, constraints=static_qp.constraints + tuple(dynamic))
        sol = solve_qp(qp, tol=qp_tol, warm_start=warm)
        if sol.status == "infeasible":
            status = "infeasible"
            infeasible_rows = sol.infeasible_rows
            reports.append(
                IterationReport(
                    round=rnd,
                    qp_status=sol.status,
                    objective=float("nan"),
                    violations=(),
                    constraints_added=tuple(seed_added) if rnd == 1 else (),
                    tsi=None,
                )
            )
            break
        warm = sol.x
        dp, dl = _candidate_point(net, sol.x)
        delta = np.concatenate([dp, dl])
        net_cand = with_operating_point(net, p0 + dp, l0 - dl)

        ft_k, res_k = _verify(net_cand, outages, contingency.sequence, sime_cfg, dt, t_end)
        saturated = [c for c in ft_k.cutsets if c.is_saturated]
        violations = [f"cutset:{'+'.join(str(b) for b in c.key())}" for c in saturated]
        if not res_k.stable:
            violations.append(f"stability:{contingency.id}")
        verification = Verification(
            tsi=res_k.tsi,
            stable=res_k.stable,
            saturated_cutsets=tuple(c.key() for c in saturated),
            max_cut_utilization=max((c.utilization for c in ft_k.cutsets), default=0.0),
            shed_mw=float(dl.sum()),
            transfer_mw=res_k.transfer_mw,
            critical_machines=tuple(sorted(res_k.critical_machines)),
        )

        added: list[str] = list(seed_added) if rnd == 1 else []
        blocking = False
        if "cutset" in addressable:
            for cut in saturated:
                row = cutset_constraint(cut, sens_post, net)
                if add_row(row):
                    added.append(row.provenance)
                blocking = True
        if "stability" in addressable and not res_k.stable and res_k.transfer_mw > 0.0:
            cm_shift = float(sum(d for g, d in zip(net.generators, dp) if g.id in res_k.critical_machines))
            row = _stability_row(
                net,
                res_k.critical_machines,
                cm_shift - res_k.transfer_mw,
                f"stability:{contingency.id}:r{rnd}",
            )
            if add_row(row):
                added.append(row.provenance)
            blocking = True

        new_rows = [p for p in added if p not in tuple(seed_added)] if rnd == 1 else added
        reports.append(
            IterationReport(
                round=rnd,
                qp_status=sol.status,
                objective=sol.objective,
                violations=tuple(violations),
                constraints_added=tuple(added),
                tsi=res_k.tsi,
            )
        )

        if not blocking:
            status = "optimal"
            break
        if not new_rows and rnd > 1:
            # violations persist but generated nothing new; looping further
            # cannot change the QP
            status = "iteration-limit"
            break

    dp = delta[:n_g]
    dl = delta[n_g:]
    cost = None
    if status != "infeasible":
        cost = dispatch_cost(net, dp, dl)
    return RedispatchSolution(
        mode=mode,
        status=status,
        gen_ids=gen_ids,
        load_ids=load_ids,
        delta_p_mw=tuple(float(v) for v in dp),
        delta_l_mw=tuple(float(v) for v in dl),
        objective=float("nan") if status == "infeasible" else static_qp.objective(delta),
        cost=cost,
        iterations=tuple(reports),
        verification=verification,
        infeasible_rows=infeasible_rows,
        solve_time_s=time.perf_counter() - started,
    )


def _loads_for_model(net: Network, model: TscpModel) -> np.ndarray:
    if not model.load_ids:
        if len(model.theta) != len(net.loads):
            raise CaseError(
                f"model has {len(model.theta)} loads, network has {len(net.loads)}, and no load ids to match"
            )
        return np.array([l.l0_mw for l in net.loads])
    by_id = {l.id: l.l0_mw for l in net.loads}
    missing = [lid for lid in model.load_ids if lid not in by_id]
    if missing:
        raise CaseError(f"model load ids {missing} are not loads of this network")
    return np.array([by_id[lid] for lid in model.load_ids])
