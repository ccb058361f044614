"""Box-and-row QP solver: analytic solutions, KKT checks, certificates."""

import numpy as np
import pytest

from wildgrid.qp import LinearConstraint, QuadraticProgram, kkt_residuals, solve_qp

INF = float("inf")


def box_qp(quad, lin, lower, upper, rows=()):
    return QuadraticProgram(
        quad=tuple(quad),
        lin=tuple(lin),
        lower=tuple(lower),
        upper=tuple(upper),
        constraints=tuple(rows),
    )


def row(coeffs, sense, rhs, tag="test", provenance="test:row"):
    return LinearConstraint(coeffs=tuple(coeffs), sense=sense, rhs=rhs, tag=tag, provenance=provenance)


def test_unconstrained_parabola():
    qp = box_qp([1.0], [-4.0], [-INF], [INF])
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.objective == pytest.approx(-4.0, abs=1e-6)


def test_bound_becomes_active():
    qp = box_qp([1.0], [-6.0], [-INF], [1.0])  # wants x=3, capped at 1
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.objective == pytest.approx(-5.0, abs=1e-6)


def test_equality_row():
    qp = box_qp([1.0, 1.0], [0.0, 0.0], [-INF, -INF], [INF, INF],
                rows=[row([1.0, 1.0], "==", 2.0)])
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-6)


def test_inequality_row_lagrange_oracle():
    # min x^2 + 2 y^2 st x + y >= 4; stationarity gives x = 2y
    qp = box_qp([1.0, 2.0], [0.0, 0.0], [-INF, -INF], [INF, INF],
                rows=[row([1.0, 1.0], ">=", 4.0)])
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(8.0 / 3.0, abs=1e-6)
    assert sol.x[1] == pytest.approx(4.0 / 3.0, abs=1e-6)
    assert sol.objective == pytest.approx(32.0 / 3.0, abs=1e-5)


def test_solution_carries_kkt_certificate():
    qp = box_qp([1.0, 2.0], [-2.0, 1.0], [-5.0, -5.0], [5.0, 5.0],
                rows=[row([1.0, -1.0], "<=", 0.5)])
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert set(sol.kkt) >= {"primal", "stationarity", "complementarity"}
    assert max(sol.kkt.values()) <= 1e-6
    # independent recheck of feasibility at the reported point
    assert kkt_residuals(qp, sol.x)["primal"] <= 1e-6


def test_box_only_closed_form_battery():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(1, 6))
        quad = rng.uniform(0.5, 3.0, n)
        lin = rng.uniform(-5.0, 5.0, n)
        lo = rng.uniform(-2.0, 0.0, n)
        hi = lo + rng.uniform(0.5, 3.0, n)
        sol = solve_qp(box_qp(quad, lin, lo, hi))
        want = np.clip(-lin / (2.0 * quad), lo, hi)
        assert sol.status == "optimal"
        assert np.allclose(sol.x, want, atol=1e-6)


def test_infeasible_rows_are_named():
    qp = box_qp([1.0], [0.0], [-INF], [INF],
                rows=[row([1.0], "<=", -1.0, tag="branch-flow", provenance="branch:7"),
                      row([1.0], ">=", 1.0, tag="cutset", provenance="cutset:4")])
    sol = solve_qp(qp)
    assert sol.status == "infeasible"
    assert set(sol.infeasible_rows) == {"branch-flow[branch:7]", "cutset[cutset:4]"}


def test_infeasible_bound_named_by_variable():
    qp = QuadraticProgram(
        quad=(1.0,), lin=(0.0,), lower=(2.0,), upper=(3.0,),
        constraints=(row([1.0], "<=", 0.0, tag="balance", provenance="balance:net"),),
        var_names=("dp[g1]",),
    )
    sol = solve_qp(qp)
    assert sol.status == "infeasible"
    assert any(name.startswith("variable-limit[") for name in sol.infeasible_rows)


def test_warm_start_reaches_same_point():
    qp = box_qp([1.0, 1.0, 2.0], [-3.0, 1.0, 0.5], [-4.0] * 3, [4.0] * 3,
                rows=[row([1.0, 1.0, 1.0], "==", 1.0), row([1.0, -1.0, 0.0], "<=", 2.0)])
    cold = solve_qp(qp)
    warm = solve_qp(qp, warm_start=cold.x)
    assert warm.status == "optimal"
    assert np.allclose(warm.x, cold.x, atol=1e-6)
    assert warm.iterations <= cold.iterations


def test_max_iterations_reported_honestly():
    qp = box_qp([1.0, 2.0], [-2.0, 1.0], [-5.0, -5.0], [5.0, 5.0],
                rows=[row([1.0, -1.0], "<=", 0.5), row([1.0, 1.0], ">=", 1.0)])
    sol = solve_qp(qp, max_iterations=2)
    assert sol.status in ("max-iterations", "optimal")
    if sol.status == "max-iterations":
        assert sol.iterations == 2


def test_violation_per_sense():
    x = np.array([3.0])
    assert row([1.0], "<=", 2.0).violation(x) == pytest.approx(1.0)
    assert row([1.0], ">=", 5.0).violation(x) == pytest.approx(2.0)
    assert row([1.0], "==", 2.5).violation(x) == pytest.approx(0.5)
    assert row([1.0], "<=", 4.0).violation(x) == 0.0


def test_problem_validation():
    with pytest.raises(ValueError):
        box_qp([-1.0], [0.0], [0.0], [1.0])  # concave
    with pytest.raises(ValueError):
        box_qp([1.0], [0.0, 0.0], [0.0], [1.0])  # length mismatch
    with pytest.raises(ValueError):
        box_qp([1.0], [0.0], [2.0], [1.0])  # crossed bounds
    with pytest.raises(ValueError):
        row([1.0], "<", 0.0)  # unknown sense
    with pytest.raises(ValueError):
        row([float("nan")], "<=", 0.0)  # non-finite coefficient
    with pytest.raises(ValueError):
        box_qp([1.0], [0.0], [0.0], [1.0], rows=[row([1.0, 2.0], "<=", 0.0)])


def test_objective_helper_matches_definition():
    qp = box_qp([1.5, 0.5], [2.0, -1.0], [-INF, -INF], [INF, INF])
    x = np.array([2.0, 3.0])
    assert qp.objective(x) == pytest.approx(1.5 * 4 + 0.5 * 9 + 2.0 * 2 - 1.0 * 3)
