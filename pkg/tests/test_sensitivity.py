"""DC power flow, injection and outage sensitivities.

Oracles: the equal-reactance ring splits 2/3 vs 1/3 by inspection, and a
two-path network's outage redistribution is checked against a re-solved
post-outage flow.
"""

import json

import numpy as np
import pytest

from wildgrid.model import apply_outage
from wildgrid.sensitivity import (
    build_sensitivity,
    compute_lodf,
    compute_ptdf,
    find_bridges,
    solve_dc_power_flow,
    topology_hash,
)


def test_ring_flow_split(ring3):
    flow = solve_dc_power_flow(ring3)
    # 90 MW from bus 1 to bus 3: direct path has half the reactance of the
    # two-hop path, so it takes 60 and the detour takes 30
    assert flow.flow_of(1) == pytest.approx(60.0)
    assert flow.flow_of(2) == pytest.approx(30.0)
    assert flow.flow_of(3) == pytest.approx(30.0)


def test_flow_requires_balance(ring3):
    with pytest.raises(ValueError, match="balance"):
        solve_dc_power_flow(ring3, injections_mw=np.array([90.0, 0.0, -80.0]))


def test_islanded_flow_rejected(ring3):
    post = apply_outage(ring3, {1, 2})
    with pytest.raises(ValueError, match="connected"):
        solve_dc_power_flow(post)


def test_ptdf_ring_oracle(ring3):
    ptdf = compute_ptdf(ring3)
    # unit injection at bus 3 (withdrawn at ref bus 1): the direct branch
    # 1-3 sees -2/3 of it, the others -1/3 each
    j = list(ring3.bus_ids).index(3)
    rows = {br.id: i for i, br in enumerate(ring3.in_service_branches)}
    assert ptdf[rows[1], j] == pytest.approx(-2.0 / 3.0)
    assert ptdf[rows[2], j] == pytest.approx(-1.0 / 3.0)
    assert ptdf[rows[3], j] == pytest.approx(-1.0 / 3.0)
    # reference bus column is identically zero
    i_ref = list(ring3.bus_ids).index(ring3.reference_bus)
    assert np.allclose(ptdf[:, i_ref], 0.0)


def test_ptdf_alternate_reference(ring3):
    p1 = compute_ptdf(ring3)
    p3 = compute_ptdf(ring3, ref_bus=3)
    # changing the slack shifts every column by the old column of the new
    # slack; differences of columns are invariant
    cols = list(ring3.bus_ids)
    d1 = p1[:, cols.index(2)] - p1[:, cols.index(3)]
    d3 = p3[:, cols.index(2)] - p3[:, cols.index(3)]
    assert np.allclose(d1, d3)


def test_ptdf_superposition_matches_flow(corridor9):
    sens = build_sensitivity(corridor9)
    inj = corridor9.base_injections_mw()
    predicted = sens.ptdf @ inj
    flow = solve_dc_power_flow(corridor9)
    got = np.array([flow.flow_of(b) for b in sens.branch_ids])
    assert np.allclose(predicted, got, atol=1e-9)


def test_lodf_ring_oracle(ring3):
    sens = build_sensitivity(ring3)
    rows = {bid: i for i, bid in enumerate(sens.branch_ids)}
    lodf = sens.lodf
    # ring of three: dropping one branch forces its flow onto the remaining
    # two-hop path one-for-one, with sign following orientation
    assert lodf[rows[2], rows[1]] == pytest.approx(1.0)
    assert lodf[rows[3], rows[1]] == pytest.approx(1.0)
    assert lodf[rows[1], rows[2]] == pytest.approx(1.0)
    for bid in (1, 2, 3):
        assert lodf[rows[bid], rows[bid]] == pytest.approx(-1.0)


def test_lodf_matches_resolved_outage(corridor9):
    sens = build_sensitivity(corridor9)
    rows = {bid: i for i, bid in enumerate(sens.branch_ids)}
    base = solve_dc_power_flow(corridor9)
    a = 2  # non-bridge corridor branch
    post = apply_outage(corridor9, {a})
    after = solve_dc_power_flow(post)
    fa = base.flow_of(a)
    for br in post.in_service_branches:
        predicted = base.flow_of(br.id) + sens.lodf[rows[br.id], rows[a]] * fa
        assert predicted == pytest.approx(after.flow_of(br.id), abs=1e-8)


def test_bridges_and_lodf_nan(corridor9):
    bridges = find_bridges(corridor9)
    # the generator feeders and the junction spur cannot be bypassed
    assert bridges == frozenset({1, 8, 9})
    ptdf = compute_ptdf(corridor9)
    lodf, flagged = compute_lodf(ptdf, corridor9)
    assert flagged == bridges
    rows = {bid: i for i, bid in enumerate(b.id for b in corridor9.in_service_branches)}
    for bid in bridges:
        col = np.delete(lodf[:, rows[bid]], rows[bid])
        assert np.isnan(col).all()
    # non-bridge columns are finite
    col = lodf[:, rows[4]]
    assert np.isfinite(col).all()


def test_sensitivity_base_flows_are_original(corridor9):
    sens = build_sensitivity(corridor9)
    flow = solve_dc_power_flow(corridor9)
    for bid, f in zip(sens.branch_ids, sens.base_flows_mw):
        assert f == pytest.approx(flow.flow_of(bid))


def test_topology_hash_tracks_service_state(ring3):
    h0 = topology_hash(ring3)
    assert h0 == topology_hash(ring3)
    post = apply_outage(ring3, {2})
    assert topology_hash(post) != h0


def test_row_col_lookup(corridor9):
    sens = build_sensitivity(corridor9)
    assert sens.branch_ids[sens.row_of(4)] == 4
    assert sens.bus_ids[sens.col_of(7)] == 7


def test_ptdf_shape_on_118(net118):
    sens = build_sensitivity(net118)
    n_in = len(net118.in_service_branches)
    assert sens.ptdf.shape == (n_in, 118)
    assert sens.lodf.shape == (n_in, n_in)
    # every in-service branch flow reproduced by superposition
    inj = net118.base_injections_mw()
    flow = solve_dc_power_flow(net118)
    got = np.array([flow.flow_of(b) for b in sens.branch_ids])
    assert np.allclose(sens.ptdf @ inj, got, atol=1e-6)
