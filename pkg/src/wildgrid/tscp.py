"""Learning the stability-constrained transfer for a contingency.

Day-ahead, load profiles are sampled around the forecast, each is simulated
through the contingency's fault sequence, and the required generation
transfer off the critical machines is recorded. A linear model of that
transfer against the load vector is cheap enough to evaluate inside a
real-time dispatch loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from collections import Counter

import numpy as np
from scipy.stats import truncnorm

from .dynamics import FaultSequence, SimeConfig, SimulationError, assess_stability, build_machines, simulate_swing
from .model import CaseError, Network, ParseError, SchemaError, scale_dispatch_to_load

__all__ = [
    "PerturbationSpec",
    "sample_loads",
    "TscpDataset",
    "build_dataset",
    "TscpModel",
    "fit_linear",
    "predict",
    "TscpMetrics",
    "evaluate",
    "train_model",
    "MAX_NOISE_LEVEL",
]

# Input-error robustness is probed at most at this relative level.
MAX_NOISE_LEVEL = 0.05


@dataclass(frozen=True)
class PerturbationSpec:
    """How to draw load profiles around the base point.

    truncated_gaussian: multiplicative factors 1 + sigma z with |z| capped at
    truncation_sigmas. empirical: factors resampled from empirical_factors.
    """

    distribution: str = "truncated_gaussian"
    sigma: float = 0.05
    truncation_sigmas: float = 3.0
    empirical_factors: tuple[float, ...] = ()

    def __post_init__(self):
        if self.distribution not in ("truncated_gaussian", "empirical"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.truncation_sigmas <= 0.0:
            raise ValueError(f"truncation_sigmas must be > 0, got {self.truncation_sigmas}")
        if self.distribution == "empirical" and not self.empirical_factors:
            raise ValueError("empirical distribution needs empirical_factors")


def sample_loads(net: Network, spec: PerturbationSpec, n: int, seed: int) -> np.ndarray:
    """(n, loads) matrix of MW levels, clipped to each load's limits.

    Fixed seed gives a bit-identical sample set.
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(seed)
    base = np.array([l.l0_mw for l in net.loads])
    lo = np.array([l.l_min_mw for l in net.loads])
    hi = np.array([l.l_max_mw for l in net.loads])
    if spec.distribution == "truncated_gaussian":
        z = truncnorm.rvs(
            -spec.truncation_sigmas,
            spec.truncation_sigmas,
            size=(n, len(base)),
            random_state=rng,
        )
        factors = 1.0 + spec.sigma * z
    else:
        factors = rng.choice(np.asarray(spec.empirical_factors), size=(n, len(base)))
    return np.clip(factors * base, lo, hi)


@dataclass(frozen=True)
class TscpDataset:
    """Simulation-labelled samples: one row per load profile.

    status per row: stable (transfer 0), unstable (positive transfer), or
    failed (simulation error; target is NaN and the row must be dropped
    before fitting). cm is the modal critical-machine set over unstable rows.
    """

    x: np.ndarray  # (n, loads) MW
    y: np.ndarray  # (n,) required transfer MW
    status: tuple[str, ...]
    load_ids: tuple[int, ...]
    cm: tuple[int, ...]

    @property
    def ok_rows(self) -> np.ndarray:
        return np.array([s != "failed" for s in self.status])


def build_dataset(
    net: Network,
    samples: np.ndarray,
    sequence: FaultSequence,
    sime_cfg: SimeConfig | None = None,
    dt: float = 1e-3,
    t_end: float = 5.0,
) -> TscpDataset:
    """Label each sampled load profile with its required transfer.

    Generation is rebalanced to each profile (proportional, within limits),
    the fault sequence is simulated, and the one-machine-equivalent transfer
    is the target (zero when stable). Rows whose simulation fails are
    flagged, not fatal.
    """
    sime_cfg = sime_cfg or SimeConfig()
    y = np.empty(len(samples))
    status = []
    cm_counter: Counter = Counter()
    for k, row in enumerate(np.asarray(samples, dtype=float)):
        try:
            net_k = scale_dispatch_to_load(net, row)
            traj = simulate_swing(net_k, sequence, dt=dt, t_end=t_end)
            res = assess_stability(traj, net_k, sime_cfg)
        except (SimulationError, CaseError, ValueError):
            y[k] = np.nan
            status.append("failed")
            continue
        if res.stable:
            y[k] = 0.0
            status.append("stable")
        else:
            y[k] = res.transfer_mw
            status.append("unstable")
            cm_counter[tuple(sorted(res.critical_machines))] += 1
    cm = ()
    if cm_counter:
        top = max(cm_counter.values())
        cm = sorted(k for k, v in cm_counter.items() if v == top)[0]
    return TscpDataset(
        x=np.asarray(samples, dtype=float),
        y=y,
        status=tuple(status),
        load_ids=tuple(l.id for l in net.loads),
        cm=tuple(cm),
    )


@dataclass(frozen=True)
class TscpModel:
    """Affine transfer predictor: transfer ~= theta . loads + theta0."""

    theta: tuple[float, ...]
    theta0: float
    contingency_id: str
    n: int
    seed: int
    load_ids: tuple[int, ...] = ()
    cm: tuple[int, ...] = ()
    ridge_used: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta": list(self.theta),
                "theta0": self.theta0,
                "contingency_id": self.contingency_id,
                "n": self.n,
                "seed": self.seed,
                "load_ids": list(self.load_ids),
                "cm": list(self.cm),
                "ridge_used": self.ridge_used,
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TscpModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"model file is not valid JSON: {exc}") from None
        for key in ("theta", "theta0", "contingency_id", "n", "seed"):
            if key not in doc:
                raise SchemaError(f"$.{key}: missing required field")
        return cls(
            theta=tuple(float(v) for v in doc["theta"]),
            theta0=float(doc["theta0"]),
            contingency_id=str(doc["contingency_id"]),
            n=int(doc["n"]),
            seed=int(doc["seed"]),
            load_ids=tuple(int(v) for v in doc.get("load_ids", [])),
            cm=tuple(int(v) for v in doc.get("cm", [])),
            ridge_used=bool(doc.get("ridge_used", False)),
        )


def fit_linear(x: np.ndarray, y: np.ndarray, ridge_fallback: bool = True) -> tuple[np.ndarray, float, bool]:
    """Least-squares affine fit; returns (theta, theta0, ridge_used).

    Solves the normal equations of mean-squared error. A rank-deficient
    design falls back to a tiny ridge on the weights (never the intercept),
    or raises when the fallback is disabled.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError(f"design/target shape mismatch: {x.shape} vs {y.shape}")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError("fit input contains NaN; drop failed rows first")
    n, p = x.shape
    aug = np.hstack([x, np.ones((n, 1))])
    rank = np.linalg.matrix_rank(aug)
    if rank == p + 1:
        sol, *_ = np.linalg.lstsq(aug, y, rcond=None)
        return sol[:p], float(sol[p]), False
    if not ridge_fallback:
        raise ValueError(f"design matrix is rank-deficient (rank {rank} of {p + 1}) and ridge fallback is off")
    lam = 1e-8 * float(np.trace(x.T @ x)) / max(n, 1)
    reg = np.zeros((p + 1, p + 1))
    reg[:p, :p] = lam * np.eye(p)
    sol = np.linalg.solve(aug.T @ aug + reg, aug.T @ y)
    return sol[:p], float(sol[p]), True


def predict(model: TscpModel, loads) -> float:
    """Predicted transfer for one load vector, clamped at zero."""
    loads = np.asarray(loads, dtype=float)
    if loads.shape != (len(model.theta),):
        raise ValueError(f"expected {len(model.theta)} load values, got shape {loads.shape}")
    return max(0.0, float(np.dot(model.theta, loads) + model.theta0))


@dataclass(frozen=True)
class TscpMetrics:
    rmse: float
    r2: float
    robustness: float  # r2 drop under bounded input noise
    mbd: float  # mean bias deviation; negative means over-estimation
    n: int


def _r2(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 0.0:
        return 1.0 if ss_res <= 1e-12 else 0.0
    return 1.0 - ss_res / ss_tot


def evaluate(
    model: TscpModel,
    x_test: np.ndarray,
    y_test: np.ndarray,
    noise_level: float = 0.0,
    seed: int = 0,
) -> TscpMetrics:
    """Accuracy metrics on held-out rows.

    robustness is the clean-minus-noisy r2 where the noisy pass perturbs
    inputs by uniform multiplicative noise of the given relative level
    (capped at MAX_NOISE_LEVEL, matching the bounded-input-error premise).
    """
    if not (0.0 <= noise_level <= MAX_NOISE_LEVEL):
        raise ValueError(f"noise_level must be in [0, {MAX_NOISE_LEVEL}], got {noise_level}")
    x = np.asarray(x_test, dtype=float)
    y = np.asarray(y_test, dtype=float)
    yhat = np.array([predict(model, row) for row in x])
    r2_clean = _r2(y, yhat)
    robustness = 0.0
    if noise_level > 0.0:
        rng = np.random.default_rng(seed)
        x_noisy = x * (1.0 + rng.uniform(-noise_level, noise_level, size=x.shape))
        yhat_noisy = np.array([predict(model, row) for row in x_noisy])
        robustness = r2_clean - _r2(y, yhat_noisy)
    return TscpMetrics(
        rmse=float(np.sqrt(np.mean((y - yhat) ** 2))),
        r2=r2_clean,
        robustness=robustness,
        mbd=float(np.mean(y - yhat)),
        n=len(y),
    )


def train_model(
    net: Network,
    sequence: FaultSequence,
    contingency_id: str,
    n: int,
    seed: int,
    spec: PerturbationSpec | None = None,
    sime_cfg: SimeConfig | None = None,
    dt: float = 1e-3,
    t_end: float = 5.0,
) -> tuple[TscpModel, TscpDataset]:
    """Day-ahead pipeline: sample, simulate, fit.

    Failed rows are dropped before fitting; at least two usable rows are
    required. The modal critical-machine set rides along in the model so a
    dispatcher can form the stability constraint without re-simulating.
    """
    build_machines(net)  # fail fast when dynamics data is missing
    spec = spec or PerturbationSpec()
    samples = sample_loads(net, spec, n, seed)
    dataset = build_dataset(net, samples, sequence, sime_cfg, dt=dt, t_end=t_end)
    ok = dataset.ok_rows
    if ok.sum() < 2:
        raise SimulationError(f"only {int(ok.sum())} usable samples of {n}; cannot fit")
    theta, theta0, ridge_used = fit_linear(dataset.x[ok], dataset.y[ok])
    model = TscpModel(
        theta=tuple(float(v) for v in theta),
        theta0=theta0,
        contingency_id=contingency_id,
        n=n,
        seed=seed,
        load_ids=dataset.load_ids,
        cm=dataset.cm,
        ridge_used=ridge_used,
    )
    return model, dataset
