"""DC power flow and linear sensitivities (PTDF, LODF).

All angles are radians, all flows MW. Matrices are dense numpy arrays whose
axes follow Network component order: rows are in-service branches (in
branch-id order), columns are buses (in bus-id order).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .model import Network, connected_components

__all__ = [
    "SensitivitySet",
    "DcFlowResult",
    "topology_hash",
    "solve_dc_power_flow",
    "compute_ptdf",
    "compute_lodf",
    "build_sensitivity",
    "find_bridges",
    "BRIDGE_PTDF_TOL",
]

# |1 - ptdf_line| below this means outage of the branch admits no DC
# redistribution: numerically a bridge even if the graph search disagrees.
BRIDGE_PTDF_TOL = 1e-6


def topology_hash(net: Network) -> str:
    """Stable hex digest of the electrical topology (buses, in-service
    branches, reactances, base). Operating point excluded."""
    h = hashlib.sha256()
    h.update(repr(net.mva_base).encode())
    for b in net.buses:
        h.update(f"b{b.id}:{int(b.is_reference)};".encode())
    for br in net.branches:
        if br.in_service:
            h.update(f"e{br.id}:{br.from_bus}>{br.to_bus}:{br.reactance!r};".encode())
    return h.hexdigest()


@dataclass(frozen=True)
class DcFlowResult:
    angles_rad: np.ndarray  # per bus, bus order
    flows_mw: np.ndarray  # per in-service branch
    branch_ids: tuple[int, ...]
    bus_ids: tuple[int, ...]

    def flow_of(self, branch_id: int) -> float:
        return float(self.flows_mw[self.branch_ids.index(branch_id)])


@dataclass(frozen=True)
class SensitivitySet:
    """PTDF/LODF bundle for one topology.

    ptdf[u, b]: MW on branch u per MW injected at bus b (withdrawn at the
    reference bus). lodf[u, a]: fraction of branch a's pre-outage flow that
    lands on branch u when a trips; columns for bridge branches are NaN and
    their ids are listed in bridge_branches. base_flows_mw holds the flows at
    the Network's own operating point.
    """

    topology: str
    ptdf: np.ndarray
    lodf: np.ndarray
    base_flows_mw: np.ndarray
    branch_ids: tuple[int, ...]
    bus_ids: tuple[int, ...]
    bridge_branches: frozenset[int]
    ref_bus: int

    def row_of(self, branch_id: int) -> int:
        return self.branch_ids.index(branch_id)

    def col_of(self, bus_id: int) -> int:
        return self.bus_ids.index(bus_id)


class _Factorization:
    """LU of the reduced susceptance matrix, cached per topology."""

    def __init__(self, net: Network):
        if not net.is_connected:
            raise ValueError("DC solve requires a connected network")
        self.bus_ids = net.bus_ids
        self.bus_index = net.bus_index
        self.ref = net.reference_bus
        self.ref_idx = self.bus_index[self.ref]
        self.keep = [i for i in range(len(net.buses)) if i != self.ref_idx]
        self.branches = net.in_service_branches
        n = len(net.buses)
        b_full = np.zeros((n, n))
        for br in self.branches:
            i, j = self.bus_index[br.from_bus], self.bus_index[br.to_bus]
            y = 1.0 / br.reactance
            b_full[i, i] += y
            b_full[j, j] += y
            b_full[i, j] -= y
            b_full[j, i] -= y
        self.lu = lu_factor(b_full[np.ix_(self.keep, self.keep)])
        # incidence scaled by 1/x, for flows = a_mat @ theta
        self.a_mat = np.zeros((len(self.branches), n))
        for r, br in enumerate(self.branches):
            self.a_mat[r, self.bus_index[br.from_bus]] = 1.0 / br.reactance
            self.a_mat[r, self.bus_index[br.to_bus]] = -1.0 / br.reactance

    def angles(self, injections_pu: np.ndarray) -> np.ndarray:
        theta = np.zeros(len(self.bus_ids))
        theta[self.keep] = lu_solve(self.lu, injections_pu[self.keep])
        return theta


_FACTOR_CACHE: dict[str, _Factorization] = {}


def _factorization(net: Network) -> _Factorization:
    key = topology_hash(net)
    fact = _FACTOR_CACHE.get(key)
    if fact is None:
        fact = _Factorization(net)
        if len(_FACTOR_CACHE) > 64:
            _FACTOR_CACHE.clear()
        _FACTOR_CACHE[key] = fact
    return fact


def solve_dc_power_flow(net: Network, injections_mw=None) -> DcFlowResult:
    """Solve B theta = P with the reference angle pinned at zero.

    injections_mw: per-bus net injection in bus order; defaults to the
    Network's own operating point. Must sum to ~0 (balanced).
    """
    fact = _factorization(net)
    if injections_mw is None:
        injections_mw = net.base_injections_mw()
    inj = np.asarray(injections_mw, dtype=float)
    if inj.shape != (len(net.buses),):
        raise ValueError(f"expected {len(net.buses)} injections, got shape {inj.shape}")
    if abs(inj.sum()) > 1e-6 * net.mva_base:
        raise ValueError(f"injections must balance; sum is {inj.sum():.6g} MW")
    theta = fact.angles(inj / net.mva_base)
    flows = fact.a_mat @ theta * net.mva_base
    return DcFlowResult(
        angles_rad=theta,
        flows_mw=flows,
        branch_ids=tuple(b.id for b in fact.branches),
        bus_ids=net.bus_ids,
    )


def compute_ptdf(net: Network, ref_bus: int | None = None) -> np.ndarray:
    """PTDF matrix: rows in-service branches, columns buses.

    Entry [u, b] is the MW flow change on u per MW injected at bus b and
    withdrawn at ref_bus (default: the network's reference bus). The ref_bus
    column is exactly zero.
    """
    fact = _factorization(net)
    if ref_bus is None:
        ref_bus = net.reference_bus
    if ref_bus not in net.bus_index:
        raise ValueError(f"unknown reference bus {ref_bus}")
    n = len(net.buses)
    keep = fact.keep
    # columns of inv(B_kk) give angles per unit injection at each kept bus
    theta_k = lu_solve(fact.lu, np.eye(len(keep)))
    theta = np.zeros((n, n))
    theta[np.ix_(keep, keep)] = theta_k
    ptdf = fact.a_mat @ theta
    # re-reference: withdrawing at ref_bus subtracts its column everywhere
    ptdf = ptdf - ptdf[:, [net.bus_index[ref_bus]]]
    return ptdf


def find_bridges(net: Network) -> frozenset[int]:
    """Ids of in-service branches whose single outage islands the network."""
    bridges = []
    for br in net.in_service_branches:
        if len(connected_components(net, exclude_branches=frozenset([br.id]))) > 1:
            bridges.append(br.id)
    return frozenset(bridges)


def compute_lodf(ptdf, net: Network) -> tuple[np.ndarray, frozenset[int]]:
    """LODF matrix from a PTDF matrix (or a SensitivitySet carrying one).

    lodf[u, a] = ptdf_line(u, a) / (1 - ptdf_line(a, a)) where ptdf_line is
    the flow on u per MW transferred from a's from_bus to its to_bus.
    Diagonal is -1. Columns for bridges (graph bridges, or branches with
    1 - ptdf_line(a,a) below BRIDGE_PTDF_TOL) are NaN.
    """
    if isinstance(ptdf, SensitivitySet):
        ptdf = ptdf.ptdf
    branches = net.in_service_branches
    m = len(branches)
    if ptdf.shape[0] != m:
        raise ValueError(f"PTDF has {ptdf.shape[0]} rows for {m} in-service branches")
    idx_from = np.array([net.bus_index[b.from_bus] for b in branches])
    idx_to = np.array([net.bus_index[b.to_bus] for b in branches])
    # ptdf_line[u, a]: flow on u per MW moved from a.from to a.to
    ptdf_line = ptdf[:, idx_from] - ptdf[:, idx_to]
    denom = 1.0 - np.diag(ptdf_line)
    bridges = set(find_bridges(net))
    bridges.update(br.id for br, d in zip(branches, denom) if abs(d) < BRIDGE_PTDF_TOL)
    lodf = np.empty((m, m))
    for a, br in enumerate(branches):
        if br.id in bridges:
            lodf[:, a] = np.nan
        else:
            lodf[:, a] = ptdf_line[:, a] / denom[a]
    np.fill_diagonal(lodf, -1.0)
    for a, br in enumerate(branches):
        if br.id in bridges:
            lodf[a, a] = np.nan
    return lodf, frozenset(bridges)


def build_sensitivity(net: Network, injections_mw=None) -> SensitivitySet:
    """PTDF + LODF + base flows for the network's current topology."""
    ptdf = compute_ptdf(net)
    lodf, bridges = compute_lodf(ptdf, net)
    flow = solve_dc_power_flow(net, injections_mw)
    return SensitivitySet(
        topology=topology_hash(net),
        ptdf=ptdf,
        lodf=lodf,
        base_flows_mw=flow.flows_mw,
        branch_ids=flow.branch_ids,
        bus_ids=net.bus_ids,
        bridge_branches=bridges,
        ref_bus=net.reference_bus,
    )
