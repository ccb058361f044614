"""Saturated cut-set discovery and corridor feasibility screening.

A cut-set is a branch set whose removal splits the buses into two sides; it
is saturated when the aggregate MW crossing it exceeds the aggregate thermal
limit, meaning no flow pattern inside the sides can relieve the corridor and
redispatch across it is forced.

Discovery is exact (all bipartitions) on small networks and seeded on large
ones: every saturated cut must contain at least one branch loaded past its
own limit, so overloaded branches seed a capacity min-cut search between
their endpoints.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import CaseError, Network, apply_outage, connected_components
from .qp import LinearConstraint
from .sensitivity import DcFlowResult, SensitivitySet, solve_dc_power_flow

__all__ = [
    "CutSet",
    "FtResult",
    "build_cutset",
    "find_saturated_cutsets",
    "transfer_margin",
    "cutset_constraint",
    "feasibility_test",
    "EXHAUSTIVE_BRANCH_LIMIT",
    "SATURATION_TOL_MW",
]

# At or below this many in-service branches every bus bipartition is checked.
EXHAUSTIVE_BRANCH_LIMIT = 12

# Loading past the limit by less than this is treated as at-limit, so a
# redispatch that lands a corridor exactly on its bound is not re-flagged.
SATURATION_TOL_MW = 1e-3


@dataclass(frozen=True)
class CutSet:
    """A two-sided separating branch set and its loading.

    side_a/side_b partition the buses and every branch in `branches` crosses
    between them; aggregate_flow_mw is the net side_a -> side_b MW (canonical
    construction orients it >= 0).
    """

    branches: frozenset[int]
    side_a: frozenset[int]
    side_b: frozenset[int]
    aggregate_flow_mw: float
    aggregate_limit_mw: float

    @property
    def utilization(self) -> float:
        return abs(self.aggregate_flow_mw) / self.aggregate_limit_mw

    @property
    def is_saturated(self) -> bool:
        return abs(self.aggregate_flow_mw) > self.aggregate_limit_mw + SATURATION_TOL_MW

    def key(self) -> tuple[int, ...]:
        return tuple(sorted(self.branches))


def transfer_margin(cut: CutSet) -> float:
    """MW that must stop crossing the cut to bring it back to its limit;
    zero when unsaturated. Orientation-independent."""
    return max(0.0, abs(cut.aggregate_flow_mw) - cut.aggregate_limit_mw)


def _flow_map(net: Network, flows) -> dict[int, float]:
    if isinstance(flows, DcFlowResult):
        return dict(zip(flows.branch_ids, flows.flows_mw.tolist()))
    if isinstance(flows, dict):
        return {int(k): float(v) for k, v in flows.items()}
    raise TypeError(f"flows must be a DcFlowResult or a branch-id mapping, got {type(flows).__name__}")


def build_cutset(net: Network, branch_ids, flows) -> CutSet:
    """Validate an explicit branch set as a two-sided cut and evaluate it.

    Raises CaseError when the set does not separate the network into two
    sides with every listed branch crossing between them.
    """
    cut = _evaluate(net, frozenset(branch_ids), _flow_map(net, flows))
    if cut is None:
        raise CaseError(f"branches {sorted(branch_ids)} do not form a two-sided cut")
    return cut


def _evaluate(net: Network, branch_ids: frozenset[int], flow_map: dict[int, float]) -> CutSet | None:
    by_id = net.branch_by_id
    for bid in branch_ids:
        br = by_id.get(bid)
        if br is None or not br.in_service:
            raise CaseError(f"cut references unknown or out-of-service branch {bid}")
        if bid not in flow_map:
            raise CaseError(f"no flow given for branch {bid}")
    comps = connected_components(net, exclude_branches=branch_ids)
    if len(comps) < 2:
        return None
    comp_of = {}
    for ci, comp in enumerate(comps):
        for bus in comp:
            comp_of[bus] = ci
    # 2-color the component graph induced by the cut branches; a valid cut
    # has every branch crossing sides and admits a bipartite coloring
    color = {}
    adj: dict[int, list[int]] = {}
    for bid in branch_ids:
        br = by_id[bid]
        ca, cb = comp_of[br.from_bus], comp_of[br.to_bus]
        if ca == cb:
            return None  # branch internal to one side: not part of a two-sided cut
        adj.setdefault(ca, []).append(cb)
        adj.setdefault(cb, []).append(ca)
    for start in range(len(comps)):
        if start in color:
            continue
        color[start] = 0
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj.get(u, ()):
                if v not in color:
                    color[v] = 1 - color[u]
                    queue.append(v)
                elif color[v] == color[u]:
                    return None  # odd cycle: no two-sided assignment exists
    side_a = frozenset(bus for bus, ci in comp_of.items() if color[ci] == 0)
    side_b = frozenset(net.bus_ids) - side_a
    flow = 0.0
    limit = 0.0
    for bid in branch_ids:
        br = by_id[bid]
        sign = 1.0 if br.from_bus in side_a else -1.0
        flow += sign * flow_map[bid]
        limit += br.flow_limit_mw
    if flow < 0.0:
        side_a, side_b, flow = side_b, side_a, -flow
    return CutSet(
        branches=branch_ids,
        side_a=side_a,
        side_b=side_b,
        aggregate_flow_mw=flow,
        aggregate_limit_mw=limit,
    )


def _past_threshold(cut: CutSet, threshold: float) -> bool:
    return abs(cut.aggregate_flow_mw) > cut.aggregate_limit_mw * threshold + SATURATION_TOL_MW


def _exhaustive_cutsets(net: Network, flow_map, threshold: float) -> list[CutSet]:
    buses = list(net.bus_ids)
    n = len(buses)
    found: dict[frozenset[int], CutSet] = {}
    # fix bus 0 in side_a to visit each bipartition once
    for mask in range(2 ** (n - 1)):
        side_a = {buses[0]}
        for k in range(n - 1):
            if mask >> k & 1:
                side_a.add(buses[k + 1])
        if len(side_a) == n:
            continue
        crossing = frozenset(
            br.id
            for br in net.in_service_branches
            if (br.from_bus in side_a) != (br.to_bus in side_a)
        )
        if not crossing or crossing in found:
            continue
        flow = 0.0
        limit = 0.0
        for bid in crossing:
            br = net.branch_by_id[bid]
            sign = 1.0 if br.from_bus in side_a else -1.0
            flow += sign * flow_map[bid]
            limit += br.flow_limit_mw
        if abs(flow) > limit * threshold + SATURATION_TOL_MW:
            cut = _evaluate(net, crossing, flow_map)
            if cut is not None and _past_threshold(cut, threshold):
                found[crossing] = cut
    return list(found.values())


def _min_cut(net: Network, source: int, sink: int) -> frozenset[int]:
    """Capacity min-cut between two buses (Edmonds-Karp on the undirected
    graph with branch limits as capacities). Returns the crossing branch ids."""
    residual: dict[tuple[int, int], float] = {}
    adj: dict[int, set[int]] = {b: set() for b in net.bus_ids}
    for br in net.in_service_branches:
        u, v = br.from_bus, br.to_bus
        residual[(u, v)] = residual.get((u, v), 0.0) + br.flow_limit_mw
        residual[(v, u)] = residual.get((v, u), 0.0) + br.flow_limit_mw
        adj[u].add(v)
        adj[v].add(u)
    while True:
        parent = {source: source}
        queue = deque([source])
        while queue and sink not in parent:
            u = queue.popleft()
            for v in sorted(adj[u]):
                if v not in parent and residual[(u, v)] > 1e-12:
                    parent[v] = u
                    queue.append(v)
        if sink not in parent:
            break
        bottleneck = np.inf
        v = sink
        while v != source:
            u = parent[v]
            bottleneck = min(bottleneck, residual[(u, v)])
            v = u
        v = sink
        while v != source:
            u = parent[v]
            residual[(u, v)] -= bottleneck
            residual[(v, u)] += bottleneck
            v = u
    reachable = {source}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in reachable and residual[(u, v)] > 1e-12:
                reachable.add(v)
                queue.append(v)
    return frozenset(
        br.id
        for br in net.in_service_branches
        if (br.from_bus in reachable) != (br.to_bus in reachable)
    )


def find_saturated_cutsets(net: Network, flows, utilization_threshold: float = 1.0) -> list[CutSet]:
    """Cut-sets whose aggregate utilization strictly exceeds the threshold.

    Exhaustive over all bus bipartitions up to EXHAUSTIVE_BRANCH_LIMIT
    in-service branches; above that, branches loaded past the threshold seed
    a min-cut between their endpoints (plus the singleton cut when the seed
    is a bridge). Results are unique by branch set and sorted by transfer
    margin, descending.
    """
    if not (0.0 < utilization_threshold):
        raise ValueError(f"utilization_threshold must be positive, got {utilization_threshold}")
    flow_map = _flow_map(net, flows)
    if len(net.in_service_branches) <= EXHAUSTIVE_BRANCH_LIMIT:
        cuts = _exhaustive_cutsets(net, flow_map, utilization_threshold)
    else:
        cuts_by_key: dict[frozenset[int], CutSet] = {}
        seeds = [
            br
            for br in net.in_service_branches
            if abs(flow_map.get(br.id, 0.0)) > br.flow_limit_mw * utilization_threshold + SATURATION_TOL_MW
        ]
        for seed in sorted(seeds, key=lambda b: b.id):
            candidates = [_min_cut(net, seed.from_bus, seed.to_bus)]
            if len(connected_components(net, exclude_branches=frozenset([seed.id]))) > 1:
                candidates.append(frozenset([seed.id]))
            for cand in candidates:
                if not cand or cand in cuts_by_key:
                    continue
                cut = _evaluate(net, cand, flow_map)
                if cut is not None and _past_threshold(cut, utilization_threshold):
                    cuts_by_key[cand] = cut
        cuts = list(cuts_by_key.values())
    cuts.sort(key=lambda c: (-transfer_margin(c), c.key()))
    return cuts


def cutset_constraint(cut: CutSet, sens: SensitivitySet, net: Network) -> LinearConstraint:
    """Linear corridor constraint over [delta_p..., delta_l_shed...].

    Enforces (base aggregate flow) + s . delta <= aggregate limit, where s
    sums orientation-signed PTDF rows over the cut branches, so the RHS in
    delta-coordinates is minus the transfer margin at the sensitivity set's
    base flows.
    """
    rows = []
    signs = []
    base_flow = 0.0
    for bid in sorted(cut.branches):
        br = net.branch_by_id.get(bid)
        if br is None or not br.in_service:
            raise CaseError(f"cut branch {bid} is not in service on this topology")
        if bid not in sens.branch_ids:
            raise CaseError(f"cut branch {bid} missing from the sensitivity set")
        r = sens.row_of(bid)
        sign = 1.0 if br.from_bus in cut.side_a else -1.0
        rows.append(r)
        signs.append(sign)
        base_flow += sign * float(sens.base_flows_mw[r])
    s_row = np.zeros(len(sens.bus_ids))
    for r, sign in zip(rows, signs):
        s_row += sign * sens.ptdf[r]
    coeffs = [float(s_row[sens.col_of(g.bus)]) for g in net.generators]
    coeffs += [float(s_row[sens.col_of(l.bus)]) for l in net.loads]
    name = "+".join(str(b) for b in sorted(cut.branches))
    return LinearConstraint(
        coeffs=tuple(coeffs),
        sense="<=",
        rhs=cut.aggregate_limit_mw - base_flow,
        tag="cutset",
        provenance=f"cutset:{name}",
    )


@dataclass(frozen=True)
class FtResult:
    """Feasibility screen of a topology change: islanding plus any saturated
    corridors on the post-outage flows."""

    outages: frozenset[int]
    islanded: bool
    islands: tuple[frozenset[int], ...]
    cutsets: tuple[CutSet, ...]
    flows: DcFlowResult | None
    post_net: Network

    @property
    def passed(self) -> bool:
        return not self.islanded and not any(c.is_saturated for c in self.cutsets)


def feasibility_test(net: Network, outages, utilization_threshold: float = 1.0) -> FtResult:
    """Apply the outage set, re-solve DC flows, and screen for saturated
    cut-sets. Islanded topologies short-circuit (no flows, no cuts)."""
    post = apply_outage(net, frozenset(outages)) if outages else net
    if not post.is_connected:
        return FtResult(
            outages=frozenset(outages),
            islanded=True,
            islands=post.islands,
            cutsets=(),
            flows=None,
            post_net=post,
        )
    flows = solve_dc_power_flow(post)
    cuts = find_saturated_cutsets(post, flows, utilization_threshold)
    return FtResult(
        outages=frozenset(outages),
        islanded=False,
        islands=post.islands,
        cutsets=tuple(cuts),
        flows=flows,
        post_net=post,
    )
