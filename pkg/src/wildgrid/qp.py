"""Dense convex QP solver: operator-splitting iterations with an active-set
polish and an independent KKT check.

Problems have a diagonal positive-semidefinite quadratic, simple variable
bounds, and a modest number of general linear rows, which keeps a dense
factorization cheap and lets the solver refactor freely when the penalty
parameter is rescaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

__all__ = [
    "LinearConstraint",
    "QuadraticProgram",
    "QpSolution",
    "solve_qp",
    "kkt_residuals",
]

_SENSES = ("<=", ">=", "==")


@dataclass(frozen=True)
class LinearConstraint:
    """One linear row: coeffs . x (sense) rhs.

    tag classifies the row (balance, branch-flow, n-1, cutset, stability,
    variable-limit); provenance is a canonical string naming what produced
    it, used to deduplicate rows across constraint-generation rounds.
    """

    coeffs: tuple[float, ...]
    sense: str
    rhs: float
    tag: str
    provenance: str

    def __post_init__(self):
        if self.sense not in _SENSES:
            raise ValueError(f"sense must be one of {_SENSES}, got {self.sense!r}")
        if not all(np.isfinite(self.coeffs)) or not np.isfinite(self.rhs):
            raise ValueError(f"constraint {self.provenance!r} has non-finite data")

    def violation(self, x: np.ndarray) -> float:
        """How far x is on the wrong side (0 when satisfied)."""
        lhs = float(np.dot(self.coeffs, x))
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass(frozen=True)
class QuadraticProgram:
    """minimize x' diag(quad) x + lin . x over lower <= x <= upper subject to
    the linear rows. quad entries must be >= 0 (convex)."""

    quad: tuple[float, ...]  # diagonal quadratic coefficients
    lin: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    constraints: tuple[LinearConstraint, ...]
    var_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.quad)
        if not (len(self.lin) == len(self.lower) == len(self.upper) == n):
            raise ValueError("quad/lin/lower/upper length mismatch")
        if any(q < 0.0 for q in self.quad):
            raise ValueError("quadratic coefficients must be >= 0")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower bound exceeds upper bound")
        for c in self.constraints:
            if len(c.coeffs) != n:
                raise ValueError(f"constraint {c.provenance!r} has {len(c.coeffs)} coeffs for {n} variables")

    @property
    def n(self) -> int:
        return len(self.quad)

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.dot(self.quad, x * x) + np.dot(self.lin, x))


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    status: str  # optimal | infeasible | max-iterations
    objective: float
    iterations: int
    kkt: dict
    infeasible_rows: tuple[str, ...] = ()


def _stacked_system(qp: QuadraticProgram):
    """Rows as l <= A x <= u: bounds first, then general constraints."""
    n = qp.n
    a_rows = [np.eye(n)]
    lo = [np.asarray(qp.lower, dtype=float)]
    hi = [np.asarray(qp.upper, dtype=float)]
    if qp.constraints:
        a_rows.append(np.array([c.coeffs for c in qp.constraints], dtype=float))
        cl, cu = [], []
        for c in qp.constraints:
            if c.sense == "<=":
                cl.append(-np.inf)
                cu.append(c.rhs)
            elif c.sense == ">=":
                cl.append(c.rhs)
                cu.append(np.inf)
            else:
                cl.append(c.rhs)
                cu.append(c.rhs)
        lo.append(np.array(cl))
        hi.append(np.array(cu))
    return np.vstack(a_rows), np.concatenate(lo), np.concatenate(hi)


def kkt_residuals(qp: QuadraticProgram, x: np.ndarray, duals: np.ndarray | None = None) -> dict:
    """Independent optimality check: primal feasibility always; stationarity
    and complementary slackness when row duals are supplied.

    Returned dict: primal (max violation over bounds and rows), and with
    duals also stationarity (inf-norm of the gradient of the Lagrangian) and
    complementarity (max |dual * slack|).
    """
    x = np.asarray(x, dtype=float)
    a_mat, lo, hi = _stacked_system(qp)
    ax = a_mat @ x
    primal = float(np.max(np.maximum(np.maximum(lo - ax, ax - hi), 0.0), initial=0.0))
    out = {"primal": primal}
    if duals is not None:
        grad = 2.0 * np.asarray(qp.quad) * x + np.asarray(qp.lin) + a_mat.T @ duals
        out["stationarity"] = float(np.max(np.abs(grad), initial=0.0))
        comp = 0.0
        for k in range(len(duals)):
            y = duals[k]
            if y > 0.0 and np.isfinite(hi[k]):
                comp = max(comp, abs(y * (hi[k] - ax[k])))
            elif y < 0.0 and np.isfinite(lo[k]):
                comp = max(comp, abs(y * (ax[k] - lo[k])))
        out["complementarity"] = float(comp)
    return out


def _feasibility_lp(a_mat, lo, hi, n):
    """min t  s.t.  lo - t <= A x <= hi + t, t >= 0. Returns (t*, x*)."""
    m = a_mat.shape[0]
    ones = np.ones((m, 1))
    a_ub, b_ub = [], []
    finite_hi = np.isfinite(hi)
    finite_lo = np.isfinite(lo)
    if finite_hi.any():
        a_ub.append(np.hstack([a_mat[finite_hi], -ones[finite_hi]]))
        b_ub.append(hi[finite_hi])
    if finite_lo.any():
        a_ub.append(np.hstack([-a_mat[finite_lo], -ones[finite_lo]]))
        b_ub.append(-lo[finite_lo])
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    res = linprog(
        cost,
        A_ub=np.vstack(a_ub),
        b_ub=np.concatenate(b_ub),
        bounds=[(None, None)] * n + [(0, None)],
        method="highs",
    )
    if not res.success:
        return np.inf, None
    return float(res.x[-1]), res.x[:n]


def _certify_infeasible(qp: QuadraticProgram, tol: float):
    """LP feasibility probe; on infeasibility, name the rows that cannot be
    met at the least-violating point."""
    a_mat, lo, hi = _stacked_system(qp)
    t_star, x_star = _feasibility_lp(a_mat, lo, hi, qp.n)
    if t_star <= 10.0 * tol:
        return None, x_star
    names = []
    for k, c in enumerate(qp.constraints):
        if c.violation(x_star) > tol:
            names.append(f"{c.tag}[{c.provenance}]")
    for i in range(qp.n):
        v = x_star[i]
        if v < qp.lower[i] - tol or v > qp.upper[i] + tol:
            name = qp.var_names[i] if i < len(qp.var_names) else f"x[{i}]"
            names.append(f"variable-limit[{name}]")
    return tuple(names) or ("unlocated",), x_star


def _polish(qp: QuadraticProgram, x, y, ax, lo, hi, a_mat, tol):
    """Equality-solve on the active set; returns (x, duals) or None.

    Two active-set guesses are tried in order: one from the dual signs
    (equality rows always included) and one from primal proximity to the
    bounds. A guess is kept only when its KKT solve is feasible and does
    not raise the worst KKT residual; objectives are never compared, since
    the unpolished iterate may buy a lower objective with infeasibility.
    """
    m = a_mat.shape[0]
    n = qp.n
    p_diag = 2.0 * np.asarray(qp.quad)
    is_eq = np.isfinite(lo) & np.isfinite(hi) & (hi - lo <= tol)
    base_resid = max(kkt_residuals(qp, x, y).values())

    def attempt(act_lo: set, act_hi: set):
        active = sorted(act_lo | act_hi)
        a_act = a_mat[active]
        b_act = np.array([lo[k] if k in act_lo else hi[k] for k in active])
        kkt = np.zeros((n + len(active), n + len(active)))
        kkt[:n, :n] = np.diag(p_diag)
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
        rhs = np.concatenate([-np.asarray(qp.lin), b_act])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x_pol = sol[:n]
        duals = np.zeros(m)
        duals[active] = sol[n:]
        ax_pol = a_mat @ x_pol
        feas = float(np.max(np.maximum(np.maximum(lo - ax_pol, ax_pol - hi), 0.0), initial=0.0))
        if feas > tol:
            return None
        # dual sign sanity: lower-bound rows need y <= 0, upper-bound rows y >= 0
        for k in active:
            if not is_eq[k]:
                if k in act_lo and duals[k] > tol:
                    duals[k] = 0.0
                if k in act_hi and duals[k] < -tol:
                    duals[k] = 0.0
        if max(kkt_residuals(qp, x_pol, duals).values()) > base_resid:
            return None
        return x_pol, duals

    by_sign = attempt(
        {k for k in range(m) if is_eq[k] or y[k] < -tol},
        {k for k in range(m) if y[k] > tol and not is_eq[k]},
    )
    if by_sign is not None:
        return by_sign
    near_lo = {k for k in range(m) if np.isfinite(lo[k]) and ax[k] - lo[k] <= 10.0 * tol * (1.0 + abs(lo[k]))}
    near_hi = {k for k in range(m) if np.isfinite(hi[k]) and hi[k] - ax[k] <= 10.0 * tol * (1.0 + abs(hi[k])) and k not in near_lo}
    return attempt(near_lo, near_hi)


def solve_qp(
    qp: QuadraticProgram,
    tol: float = 1e-6,
    max_iterations: int = 50_000,
    warm_start: np.ndarray | None = None,
) -> QpSolution:
    """Solve the QP by over-relaxed ADMM splitting, then polish.

    Converged solutions are polished on the active set and certified with
    kkt_residuals; if the iteration stalls, an LP feasibility probe decides
    between an infeasibility certificate (with offending row names) and a
    max-iterations report.
    """
    n = qp.n
    a_mat, lo, hi = _stacked_system(qp)
    m = a_mat.shape[0]
    p_diag = 2.0 * np.asarray(qp.quad)
    q_vec = np.asarray(qp.lin, dtype=float)

    sigma = 1e-6
    rho = 1.0
    alpha = 1.6

    def factor(rho_val):
        return cho_factor(np.diag(p_diag + sigma) + rho_val * (a_mat.T @ a_mat))

    chol = factor(rho)
    x = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    z = np.clip(a_mat @ x, lo, hi)
    y = np.zeros(m)

    status = "max-iterations"
    iters = max_iterations
    for it in range(1, max_iterations + 1):
        rhs = sigma * x - q_vec + a_mat.T @ (rho * z - y)
        x_tilde = cho_solve(chol, rhs)
        x = alpha * x_tilde + (1.0 - alpha) * x
        ax_tilde = a_mat @ x_tilde
        z_prev = z
        z_arg = alpha * ax_tilde + (1.0 - alpha) * z_prev + y / rho
        z = np.clip(z_arg, lo, hi)
        y = y + rho * (alpha * ax_tilde + (1.0 - alpha) * z_prev - z)

        if it % 25 == 0 or it == max_iterations:
            ax = a_mat @ x
            r_prim = float(np.max(np.abs(ax - z), initial=0.0))
            r_dual = float(np.max(np.abs(p_diag * x + q_vec + a_mat.T @ y), initial=0.0))
            eps_prim = tol + tol * max(np.max(np.abs(ax), initial=0.0), np.max(np.abs(z), initial=0.0))
            eps_dual = tol + tol * max(
                np.max(np.abs(p_diag * x), initial=0.0),
                np.max(np.abs(q_vec), initial=0.0),
                np.max(np.abs(a_mat.T @ y), initial=0.0),
            )
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = "converged"
                iters = it
                break
            if it % 500 == 0 and r_prim > 1e4 * eps_prim * (1.0 + r_dual / max(eps_dual, 1e-300)):
                # primal residual refuses to close: probe feasibility early
                rows, _ = _certify_infeasible(qp, tol)
                if rows is not None:
                    return QpSolution(
                        x=x,
                        status="infeasible",
                        objective=float("nan"),
                        iterations=it,
                        kkt={"primal": r_prim},
                        infeasible_rows=rows,
                    )
            if it % 200 == 0 and r_dual > 0.0:
                ratio = np.sqrt(r_prim / max(r_dual, 1e-300))
                if ratio > 5.0 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                    chol = factor(rho)

    if status == "max-iterations":
        rows, _ = _certify_infeasible(qp, tol)
        if rows is not None:
            return QpSolution(
                x=x,
                status="infeasible",
                objective=float("nan"),
                iterations=iters,
                kkt={"primal": float(np.max(np.abs(a_mat @ x - z), initial=0.0))},
                infeasible_rows=rows,
            )
        return QpSolution(
            x=x,
            status="max-iterations",
            objective=qp.objective(x),
            iterations=iters,
            kkt=kkt_residuals(qp, x, y),
        )

    ax = a_mat @ x
    polished = _polish(qp, x, y, ax, lo, hi, a_mat, tol)
    duals = y
    if polished is not None:
        x, duals = polished
    kkt = kkt_residuals(qp, x, duals)
    return QpSolution(
        x=x,
        status="optimal",
        objective=qp.objective(x),
        iterations=iters,
        kkt=kkt,
    )
