"""Classical-model transient simulation and stability margins.

Machines are constant-EMF-behind-transient-reactance, loads are constant
admittances, and the network is reduced to machine internal nodes, so the
state is one rotor angle and one speed deviation per machine. Faults are
large reactive shunts at a fractional position along a branch; integration
is fixed-step RK4 with piecewise-constant topology between events.

Angles are radians and speeds per-unit deviations inside the integrator;
reporting converts to degrees where noted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Network, ParseError, SchemaError

__all__ = [
    "F_NOMINAL_HZ",
    "OMEGA_S",
    "MAX_DT_S",
    "FAULT_ADMITTANCE",
    "SimulationError",
    "FaultEvent",
    "FaultSequence",
    "parse_fault_sequence",
    "MachineSet",
    "build_machines",
    "kron_reduce",
    "RotorTrajectory",
    "simulate_swing",
    "TsiResult",
    "compute_tsi",
    "identify_critical_machines",
    "SimeConfig",
    "SimeMargin",
    "sime_margin",
    "ieeac_transfer",
    "StabilityAssessment",
    "assess_stability",
]

F_NOMINAL_HZ = 60.0
OMEGA_S = 2.0 * math.pi * F_NOMINAL_HZ

# Fixed-step RK4 loses fidelity fast on swing dynamics; steps above this
# are refused rather than silently degraded.
MAX_DT_S = 0.02

# Bolted three-phase fault stand-in: a huge inductive shunt.
FAULT_ADMITTANCE = -1e6j

_EVENT_KINDS = ("apply_fault", "clear_fault", "trip_branch")


class SimulationError(RuntimeError):
    """Simulation could not produce a usable trajectory."""


@dataclass(frozen=True)
class FaultEvent:
    t: float
    kind: str
    branch: int
    pos: float = 0.5  # fractional distance from from_bus, apply_fault only

    def __post_init__(self):
        if self.kind not in _EVENT_KINDS:
            raise SchemaError(f"event kind must be one of {_EVENT_KINDS}, got {self.kind!r}")
        if self.t < 0.0:
            raise SchemaError(f"event time must be >= 0, got {self.t}")
        if not (0.0 <= self.pos <= 1.0):
            raise SchemaError(f"fault position must be in [0, 1], got {self.pos}")


@dataclass(frozen=True)
class FaultSequence:
    events: tuple[FaultEvent, ...]

    def __post_init__(self):
        times = [e.t for e in self.events]
        if any(b > a + 1e-12 for a, b in zip(times[1:], times)):
            raise SchemaError("event times must be non-decreasing")

    @property
    def end_time(self) -> float:
        return self.events[-1].t if self.events else 0.0

    @property
    def tripped_branches(self) -> frozenset[int]:
        return frozenset(e.branch for e in self.events if e.kind == "trip_branch")

    def to_dict(self) -> dict:
        return {
            "events": [
                {"t": e.t, "kind": e.kind, "branch": e.branch}
                | ({"pos": e.pos} if e.kind == "apply_fault" else {})
                for e in self.events
            ]
        }


def parse_fault_sequence(text: str) -> FaultSequence:
    """Parse {"events": [{"t", "kind", "branch", "pos"?}, ...]} JSON."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"fault sequence is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("events"), list):
        raise SchemaError("$.events: missing event array")
    events = []
    for i, e in enumerate(doc["events"]):
        path = f"$.events[{i}]"
        if not isinstance(e, dict):
            raise SchemaError(f"{path}: expected an object")
        for key in ("t", "kind", "branch"):
            if key not in e:
                raise SchemaError(f"{path}.{key}: missing required field")
        if not isinstance(e["t"], (int, float)) or isinstance(e["t"], bool):
            raise SchemaError(f"{path}.t: expected a number")
        if not isinstance(e["branch"], int) or isinstance(e["branch"], bool):
            raise SchemaError(f"{path}.branch: expected an integer")
        pos = e.get("pos", 0.5)
        if not isinstance(pos, (int, float)) or isinstance(pos, bool):
            raise SchemaError(f"{path}.pos: expected a number")
        events.append(FaultEvent(t=float(e["t"]), kind=str(e["kind"]), branch=e["branch"], pos=float(pos)))
    return FaultSequence(events=tuple(events))


# ---------------------------------------------------------------------------
# Machine data and network reduction


@dataclass(frozen=True)
class MachineSet:
    """Per-machine constants on the system base, in generator order."""

    ids: tuple[int, ...]
    buses: tuple[int, ...]
    emf: np.ndarray  # internal EMF magnitude, pu
    delta0: np.ndarray  # initial rotor angle, rad
    pm: np.ndarray  # mechanical power, pu (balanced to the reduced network)
    h_sys: np.ndarray  # inertia seconds, system base
    d_sys: np.ndarray  # damping, system base
    xd_sys: np.ndarray  # transient reactance, system base

    @property
    def m_coeff(self) -> np.ndarray:
        """Inertia coefficients M_i = 2 H_i / omega_s (angles in radians)."""
        return 2.0 * self.h_sys / OMEGA_S


def build_machines(net: Network) -> MachineSet:
    """Machine constants plus internal EMFs fitted to the DC operating point.

    Every generator must carry dynamics data. The machine terminal voltage is
    1.0 pu at the DC angle; mechanical power is then re-balanced to the
    electrical power of the reduced pre-event network so the simulation
    starts at an exact equilibrium.
    """
    from .sensitivity import solve_dc_power_flow

    missing = [g.id for g in net.generators if g.dynamics is None]
    if missing:
        raise SimulationError(f"generators {missing} have no dynamics data; supply a dynamics sidecar")
    if not net.generators:
        raise SimulationError("network has no generators to simulate")
    theta = solve_dc_power_flow(net).angles_rad
    ids, buses, emf, delta0, h_sys, d_sys, xd_sys, p0 = [], [], [], [], [], [], [], []
    for g in net.generators:
        d = g.dynamics
        ratio = d.mva_base / net.mva_base
        x_sys = d.xd_prime / ratio
        th = theta[net.bus_index[g.bus]]
        v = np.exp(1j * th)
        current = (g.p0_mw / net.mva_base) * np.exp(1j * th)  # conj(S/V) with S = P
        e = v + 1j * x_sys * current
        ids.append(g.id)
        buses.append(g.bus)
        emf.append(abs(e))
        delta0.append(float(np.angle(e)))
        h_sys.append(d.inertia_h * ratio)
        d_sys.append(d.damping_d * ratio)
        xd_sys.append(x_sys)
        p0.append(g.p0_mw / net.mva_base)
    machines = MachineSet(
        ids=tuple(ids),
        buses=tuple(buses),
        emf=np.array(emf),
        delta0=np.array(delta0),
        pm=np.array(p0),
        h_sys=np.array(h_sys),
        d_sys=np.array(d_sys),
        xd_sys=np.array(xd_sys),
    )
    y_pre = _reduced_admittance(net, machines, fault=None, outages=frozenset())
    pe0 = _electrical_power(machines.emf * np.exp(1j * machines.delta0), y_pre)
    return MachineSet(
        ids=machines.ids,
        buses=machines.buses,
        emf=machines.emf,
        delta0=machines.delta0,
        pm=pe0,
        h_sys=machines.h_sys,
        d_sys=machines.d_sys,
        xd_sys=machines.xd_sys,
    )


def _electrical_power(e_phasors: np.ndarray, y_red: np.ndarray) -> np.ndarray:
    return np.real(e_phasors * np.conj(y_red @ e_phasors))


def _reduced_admittance(
    net: Network,
    machines: MachineSet,
    fault: tuple[int, float] | None,
    outages: frozenset[int],
    include_loads: bool = True,
) -> np.ndarray:
    """Admittance matrix reduced to machine internal nodes.

    Node order: machines, then buses, then (if faulted mid-branch) the fault
    node. Branch resistance is zero by model choice; loads contribute a
    conductance equal to their MW at flat voltage.
    """
    m = len(machines.ids)
    n = len(net.buses)
    fault_mid = fault is not None and 1e-9 < fault[1] < 1.0 - 1e-9
    size = m + n + (1 if fault_mid else 0)
    y = np.zeros((size, size), dtype=complex)

    def add(i: int, j: int, adm: complex):
        y[i, i] += adm
        y[j, j] += adm
        y[i, j] -= adm
        y[j, i] -= adm

    for k in range(m):
        add(k, m + net.bus_index[machines.buses[k]], 1.0 / (1j * machines.xd_sys[k]))
    for br in net.branches:
        if not br.in_service or br.id in outages:
            continue
        i = m + net.bus_index[br.from_bus]
        j = m + net.bus_index[br.to_bus]
        if fault is not None and fault[0] == br.id:
            pos = fault[1]
            if pos <= 1e-9:
                y[i, i] += FAULT_ADMITTANCE
                add(i, j, 1.0 / (1j * br.reactance))
            elif pos >= 1.0 - 1e-9:
                y[j, j] += FAULT_ADMITTANCE
                add(i, j, 1.0 / (1j * br.reactance))
            else:
                f = m + n
                y[f, f] += FAULT_ADMITTANCE
                add(i, f, 1.0 / (1j * br.reactance * pos))
                add(f, j, 1.0 / (1j * br.reactance * (1.0 - pos)))
        else:
            add(i, j, 1.0 / (1j * br.reactance))
    if include_loads:
        for load in net.loads:
            y[m + net.bus_index[load.bus], m + net.bus_index[load.bus]] += load.l0_mw / net.mva_base
    y_mm = y[:m, :m]
    y_mr = y[:m, m:]
    y_rm = y[m:, :m]
    y_rr = y[m:, m:]
    try:
        return y_mm - y_mr @ np.linalg.solve(y_rr, y_rm)
    except np.linalg.LinAlgError as exc:
        raise SimulationError(f"network reduction is singular (islanded machines?): {exc}") from None


def kron_reduce(net: Network, loads_as_admittance: bool = True) -> np.ndarray:
    """Reduced admittance over machine internal nodes for the base topology.

    With loads_as_admittance=False the load conductances are omitted, which
    leaves a lossless (purely reactive) reduced network.
    """
    machines = build_machines(net)
    return _reduced_admittance(net, machines, fault=None, outages=frozenset(), include_loads=loads_as_admittance)


# ---------------------------------------------------------------------------
# Time-domain simulation


@dataclass(frozen=True)
class RotorTrajectory:
    """Rotor angles (rad) and speed deviations (pu) on a fixed time grid;
    rows follow machine order."""

    times: np.ndarray
    angles_rad: np.ndarray  # (machines, steps)
    speeds_pu: np.ndarray
    machine_ids: tuple[int, ...]

    def angles_deg(self) -> np.ndarray:
        return np.degrees(self.angles_rad)


def simulate_swing(
    net: Network,
    sequence: FaultSequence,
    dt: float = 1e-3,
    t_end: float = 5.0,
    machines: MachineSet | None = None,
) -> RotorTrajectory:
    """Integrate the swing equations through a fault/outage sequence.

    Event times are snapped to the nearest step boundary; simultaneous
    events apply in listed order. dt above MAX_DT_S is refused, and t_end
    must not precede the last event.
    """
    if not (0.0 < dt <= MAX_DT_S):
        raise ValueError(f"dt must be in (0, {MAX_DT_S}] s, got {dt}")
    if t_end < sequence.end_time:
        raise ValueError(f"t_end {t_end} precedes the last event at {sequence.end_time}")
    by_id = net.branch_by_id
    for e in sequence.events:
        br = by_id.get(e.branch)
        if br is None:
            raise ValueError(f"event references unknown branch {e.branch}")
        if not br.in_service:
            raise ValueError(f"event references out-of-service branch {e.branch}")

    if machines is None:
        machines = build_machines(net)
    m = len(machines.ids)
    n_steps = int(round(t_end / dt))

    # event step indices, preserving order within a step
    schedule: dict[int, list[FaultEvent]] = {}
    for e in sequence.events:
        schedule.setdefault(min(int(round(e.t / dt)), n_steps), []).append(e)

    times = np.arange(n_steps + 1) * dt
    angles = np.empty((m, n_steps + 1))
    speeds = np.empty((m, n_steps + 1))
    delta = machines.delta0.copy()
    omega = np.zeros(m)
    angles[:, 0] = delta
    speeds[:, 0] = omega

    fault: tuple[int, float] | None = None
    outages: set[int] = set()
    y_cache: dict = {}

    def current_y():
        key = (fault, frozenset(outages))
        y = y_cache.get(key)
        if y is None:
            y = _reduced_admittance(net, machines, fault, frozenset(outages))
            y_cache[key] = y
        return y

    emf = machines.emf
    pm = machines.pm
    two_h = 2.0 * machines.h_sys
    d_sys = machines.d_sys

    def apply_events(step: int):
        nonlocal fault
        for e in schedule.get(step, ()):
            if e.kind == "apply_fault":
                fault = (e.branch, e.pos)
            elif e.kind == "clear_fault":
                if fault is not None and fault[0] == e.branch:
                    fault = None
            else:  # trip_branch
                if e.branch in outages:
                    raise SimulationError(f"branch {e.branch} tripped twice")
                outages.add(e.branch)
                if fault is not None and fault[0] == e.branch:
                    fault = None

    apply_events(0)
    y_now = current_y()

    def deriv(d, w, y):
        pe = _electrical_power(emf * np.exp(1j * d), y)
        return w * OMEGA_S, (pm - pe - d_sys * w) / two_h

    for step in range(1, n_steps + 1):
        k1d, k1w = deriv(delta, omega, y_now)
        k2d, k2w = deriv(delta + 0.5 * dt * k1d, omega + 0.5 * dt * k1w, y_now)
        k3d, k3w = deriv(delta + 0.5 * dt * k2d, omega + 0.5 * dt * k2w, y_now)
        k4d, k4w = deriv(delta + dt * k3d, omega + dt * k3w, y_now)
        delta = delta + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
        omega = omega + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        angles[:, step] = delta
        speeds[:, step] = omega
        if step in schedule:
            apply_events(step)
            y_now = current_y()

    return RotorTrajectory(times=times, angles_rad=angles, speeds_pu=speeds, machine_ids=machines.ids)


# ---------------------------------------------------------------------------
# Stability indices


@dataclass(frozen=True)
class TsiResult:
    tsi: float
    delta_max_deg: float  # largest adjacent gap in sorted rotor angles, over time
    time_of_max_s: float
    gap_below: tuple[int, ...]  # machine ids at or below the gap at that instant
    gap_above: tuple[int, ...]

    @property
    def stable(self) -> bool:
        return self.tsi > 0.0


def compute_tsi(traj: RotorTrajectory) -> TsiResult:
    """Transient stability index from the worst angular spread.

    delta_max is the largest gap between consecutive machines in the sorted
    rotor-angle list, maximized over time; TSI = 100 (360 - delta_max) /
    (360 + delta_max), positive iff delta_max < 360 degrees.
    """
    m = traj.angles_rad.shape[0]
    if m < 2:
        raise ValueError("TSI needs at least two machines")
    deg = traj.angles_deg()
    order = np.argsort(deg, axis=0)
    sorted_deg = np.take_along_axis(deg, order, axis=0)
    gaps = np.diff(sorted_deg, axis=0)  # (m-1, steps)
    flat = int(np.argmax(gaps))
    gap_row, t_idx = np.unravel_index(flat, gaps.shape)
    delta_max = float(gaps[gap_row, t_idx])
    tsi = 100.0 * (360.0 - delta_max) / (360.0 + delta_max)
    below = tuple(traj.machine_ids[i] for i in order[: gap_row + 1, t_idx])
    above = tuple(traj.machine_ids[i] for i in order[gap_row + 1 :, t_idx])
    return TsiResult(
        tsi=tsi,
        delta_max_deg=delta_max,
        time_of_max_s=float(traj.times[t_idx]),
        gap_below=below,
        gap_above=above,
    )


def identify_critical_machines(traj: RotorTrajectory) -> tuple[frozenset[int], frozenset[int]]:
    """(critical, non-critical) machine ids.

    Critical machines are the group above the largest angular gap at the
    instant the gap peaks; a stable trajectory (TSI > 0) has no critical
    machines.
    """
    res = compute_tsi(traj)
    if res.stable:
        return frozenset(), frozenset(traj.machine_ids)
    return frozenset(res.gap_above), frozenset(res.gap_below)


# ---------------------------------------------------------------------------
# One-machine equivalent margin and transfer


@dataclass(frozen=True)
class SimeConfig:
    epsilon: float = 1.0  # MW rad, margin offset forcing a strictly stabilizing move
    tau: float = 0.05  # rad, angle scale converting margin to power
    instability_angle_deg: float = 360.0  # equivalent-angle cutoff for extrapolation

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not (self.tau > 0.0):
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not (self.instability_angle_deg > 0.0):
            raise ValueError(f"instability_angle_deg must be > 0, got {self.instability_angle_deg}")


@dataclass(frozen=True)
class SimeMargin:
    eta: float  # MW rad, <= 0 for an unstable trajectory
    omega_u: float  # rad/s equivalent speed where the margin is taken
    m_total: float  # s^2/rad, system-base inertia coefficients
    m_cm: float
    m_nm: float
    extrapolated: bool  # True when taken at the instability-angle cutoff

    @property
    def m_omib(self) -> float:
        return self.m_cm * self.m_nm / self.m_total


def _machine_m(net: Network) -> dict[int, float]:
    out = {}
    for g in net.generators:
        if g.dynamics is None:
            raise SimulationError(f"generator {g.id} has no dynamics data")
        out[g.id] = 2.0 * (g.dynamics.inertia_h * g.dynamics.mva_base / net.mva_base) / OMEGA_S
    return out


def sime_margin(
    traj: RotorTrajectory,
    cm: frozenset[int],
    nm: frozenset[int],
    net: Network,
    instability_angle_deg: float = 360.0,
) -> SimeMargin:
    """Unstable-margin of the one-machine equivalent built from a CM/NM split.

    The margin is -1/2 M_omib omega_u^2 (scaled to MW rad) with omega_u the
    equivalent speed where the accelerating power crosses zero from below
    while the equivalent still separates. If no crossing is reached, the
    margin is taken where the equivalent angle passes the instability cutoff
    (flagged extrapolated); if neither happens the trajectory is too short
    and a SimulationError asks for a longer t_end.
    """
    if not cm or not nm:
        raise ValueError("both machine groups must be non-empty")
    if cm & nm:
        raise ValueError(f"machine groups overlap: {sorted(cm & nm)}")
    m_by_id = _machine_m(net)
    idx = {mid: i for i, mid in enumerate(traj.machine_ids)}
    for mid in cm | nm:
        if mid not in idx:
            raise ValueError(f"machine {mid} not in trajectory")
    cm_i = [idx[i] for i in sorted(cm)]
    nm_i = [idx[i] for i in sorted(nm)]
    m_vec = np.array([m_by_id[mid] for mid in traj.machine_ids])
    m_cm = float(m_vec[cm_i].sum())
    m_nm = float(m_vec[nm_i].sum())
    m_total = m_cm + m_nm
    m_omib = m_cm * m_nm / m_total

    w_rad = traj.speeds_pu * OMEGA_S
    delta_omib = (m_vec[cm_i] @ traj.angles_rad[cm_i]) / m_cm - (m_vec[nm_i] @ traj.angles_rad[nm_i]) / m_nm
    omega_omib = (m_vec[cm_i] @ w_rad[cm_i]) / m_cm - (m_vec[nm_i] @ w_rad[nm_i]) / m_nm
    p_acc = m_omib * np.gradient(omega_omib, traj.times)

    scale = net.mva_base  # pu rad -> MW rad
    started_decel = False
    for k in range(1, len(traj.times)):
        if p_acc[k] < 0.0:
            started_decel = True
            continue
        if started_decel and p_acc[k] >= 0.0 > p_acc[k - 1] and omega_omib[k] > 0.0:
            frac = p_acc[k - 1] / (p_acc[k - 1] - p_acc[k])
            w_u = omega_omib[k - 1] + frac * (omega_omib[k] - omega_omib[k - 1])
            return SimeMargin(
                eta=-0.5 * m_omib * w_u * w_u * scale,
                omega_u=float(w_u),
                m_total=m_total,
                m_cm=m_cm,
                m_nm=m_nm,
                extrapolated=False,
            )
    cutoff = math.radians(instability_angle_deg)
    beyond = np.nonzero(np.abs(delta_omib - delta_omib[0]) >= cutoff)[0]
    if beyond.size:
        k = int(beyond[0])
        w_u = omega_omib[k]
        return SimeMargin(
            eta=-0.5 * m_omib * w_u * w_u * scale,
            omega_u=float(w_u),
            m_total=m_total,
            m_cm=m_cm,
            m_nm=m_nm,
            extrapolated=True,
        )
    raise SimulationError("margin undetermined: extend t_end")


def ieeac_transfer(eta: float, m_total: float, m_cm: float, m_nm: float, cfg: SimeConfig) -> float:
    """MW to move off the critical machines to close a negative margin.

    delta_p = ((-eta + epsilon) / tau) / (M/M_cm + M/M_nm); a margin already
    at or above epsilon needs no transfer.
    """
    if m_cm <= 0.0 or m_nm <= 0.0 or m_total <= 0.0:
        raise ValueError("inertia coefficients must be positive")
    if eta >= cfg.epsilon:
        return 0.0
    factor = 1.0 / (m_total / m_cm + m_total / m_nm)
    return ((-eta + cfg.epsilon) / cfg.tau) * factor


@dataclass(frozen=True)
class StabilityAssessment:
    tsi: float
    delta_max_deg: float
    critical_machines: frozenset[int]
    non_critical_machines: frozenset[int]
    eta: float  # 0 when stable
    transfer_mw: float  # generation to move off the critical machines
    m_total: float
    m_cm: float
    m_nm: float
    extrapolated: bool

    @property
    def stable(self) -> bool:
        return self.tsi > 0.0


def assess_stability(traj: RotorTrajectory, net: Network, cfg: SimeConfig | None = None) -> StabilityAssessment:
    """TSI, machine split, margin, and required transfer in one pass."""
    cfg = cfg or SimeConfig()
    res = compute_tsi(traj)
    cm, nm = identify_critical_machines(traj)
    m_by_id = _machine_m(net)
    m_total = sum(m_by_id[mid] for mid in traj.machine_ids)
    if res.stable:
        return StabilityAssessment(
            tsi=res.tsi,
            delta_max_deg=res.delta_max_deg,
            critical_machines=frozenset(),
            non_critical_machines=nm,
            eta=0.0,
            transfer_mw=0.0,
            m_total=m_total,
            m_cm=0.0,
            m_nm=m_total,
            extrapolated=False,
        )
    margin = sime_margin(traj, cm, nm, net)
    transfer = ieeac_transfer(margin.eta, margin.m_total, margin.m_cm, margin.m_nm, cfg)
    return StabilityAssessment(
        tsi=res.tsi,
        delta_max_deg=res.delta_max_deg,
        critical_machines=cm,
        non_critical_machines=nm,
        eta=margin.eta,
        transfer_mw=transfer,
        m_total=margin.m_total,
        m_cm=margin.m_cm,
        m_nm=margin.m_nm,
        extrapolated=margin.extrapolated,
    )
