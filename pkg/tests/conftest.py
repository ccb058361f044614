"""Shared fixtures: packaged cases, small hand-built networks, fault
sequences, and the acceptance summary hook."""

from __future__ import annotations

import json
from importlib import resources

import pytest

from wildgrid.dynamics import FaultEvent, FaultSequence, parse_fault_sequence
from wildgrid.model import Network, parse_json_case, parse_matpower_case

DATA = resources.files("wildgrid.data")


def ring3_doc() -> dict:
    """Three buses in a ring, one generator, one load, equal reactances."""
    return {
        "mva_base": 100.0,
        "buses": [{"id": 1, "is_reference": True}, {"id": 2}, {"id": 3}],
        "branches": [
            {"id": 1, "from_bus": 1, "to_bus": 3, "reactance": 0.1, "flow_limit_mw": 100.0},
            {"id": 2, "from_bus": 1, "to_bus": 2, "reactance": 0.1, "flow_limit_mw": 100.0},
            {"id": 3, "from_bus": 2, "to_bus": 3, "reactance": 0.1, "flow_limit_mw": 100.0},
        ],
        "generators": [
            {"id": 1, "bus": 1, "p0_mw": 90.0, "p_min_mw": 0.0, "p_max_mw": 200.0,
             "cost_a": 0.0, "cost_b": 10.0, "cost_c": 0.01},
        ],
        "loads": [
            {"id": 1, "bus": 3, "l0_mw": 90.0, "l_min_mw": 0.0, "l_max_mw": 90.0,
             "shed_cost": 500.0},
        ],
    }


def smib_doc(h: float = 3.0, d: float = 0.0, x_line: float = 0.4, pm_mw: float = 50.0) -> dict:
    """One finite machine against a near-infinite bus over a single line.

    The stiff side is a generator with enormous inertia and negligible
    internal reactance, so the reduced two-machine system behaves as the
    classic single-machine case with a closed-form critical clearing time.
    """
    return {
        "mva_base": 100.0,
        "buses": [{"id": 1}, {"id": 2, "is_reference": True}],
        "branches": [
            {"id": 1, "from_bus": 1, "to_bus": 2, "reactance": x_line, "flow_limit_mw": 999.0},
        ],
        "generators": [
            {"id": 1, "bus": 1, "p0_mw": pm_mw, "p_min_mw": 0.0, "p_max_mw": 2 * pm_mw,
             "cost_a": 0.0, "cost_b": 5.0, "cost_c": 0.01,
             "dynamics": {"inertia_h": h, "damping_d": d, "xd_prime": 0.3, "mva_base": 100.0}},
            {"id": 2, "bus": 2, "p0_mw": -pm_mw, "p_min_mw": -1000.0, "p_max_mw": 1000.0,
             "cost_a": 0.0, "cost_b": 5.0, "cost_c": 0.01,
             "dynamics": {"inertia_h": 1e6, "damping_d": 0.0, "xd_prime": 1e-4, "mva_base": 100.0}},
        ],
        "loads": [],
    }


@pytest.fixture()
def ring3() -> Network:
    return parse_json_case(json.dumps(ring3_doc()))


@pytest.fixture()
def smib() -> Network:
    return parse_json_case(json.dumps(smib_doc()))


@pytest.fixture(scope="session")
def corridor9() -> Network:
    return parse_json_case((DATA / "case9_corridor.json").read_text())


@pytest.fixture(scope="session")
def corridor_sequence() -> FaultSequence:
    return parse_fault_sequence((DATA / "case9_contingency.json").read_text())


@pytest.fixture(scope="session")
def net118() -> Network:
    return parse_matpower_case(
        (DATA / "ieee118.m").read_text(),
        dynamics_sidecar=(DATA / "ieee118_dynamics.json").read_text(),
    )


def short_fault(branch: int, t_on: float, t_off: float, pos: float = 0.5) -> FaultSequence:
    return FaultSequence(events=(
        FaultEvent(t_on, "apply_fault", branch, pos),
        FaultEvent(t_off, "clear_fault", branch),
    ))


# one PASS/FAIL line per acceptance criterion, printed as results come in
_ACCEPTANCE: list[tuple[str, bool]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    label = name.removeprefix("test_").replace("_", " ")
    _ACCEPTANCE.append((label, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for label, passed in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {label}")
