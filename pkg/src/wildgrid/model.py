"""Network model: typed grid components, case parsers, canonical serialization.

The model is deliberately static and DC-oriented: branches carry a series
reactance only, voltage magnitudes are assumed flat, and the operating
point is described by MW quantities on a single system MVA base.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property

__all__ = [
    "CaseError",
    "ParseError",
    "SchemaError",
    "UnsupportedCaseFeature",
    "InvariantViolation",
    "Bus",
    "Branch",
    "GenDynamics",
    "Generator",
    "Load",
    "Network",
    "parse_matpower_case",
    "parse_json_case",
    "apply_dynamics_sidecar",
    "serialize_network",
    "canonical_json",
    "apply_outage",
    "with_operating_point",
    "scale_dispatch_to_load",
    "connected_components",
    "DEFAULT_FLOW_LIMIT_MW",
    "BALANCE_TOL_PU",
]

# Branches with no thermal rating in the source data get a limit high enough
# never to bind.
DEFAULT_FLOW_LIMIT_MW = 9900.0

# Generation/load balance tolerance, per-unit on the system base.
BALANCE_TOL_PU = 1e-6


class CaseError(ValueError):
    """Base class for case-data problems."""


class ParseError(CaseError):
    """Malformed case text (bad matrix row, missing section, ...)."""


class SchemaError(CaseError):
    """JSON case violates the expected schema; message carries a JSON path."""


class UnsupportedCaseFeature(CaseError):
    """Case uses a feature outside the supported subset."""


class InvariantViolation(CaseError):
    """Structurally valid data that breaks a model invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    is_reference: bool = False

    def __post_init__(self):
        if not isinstance(self.id, int) or isinstance(self.id, bool):
            raise InvariantViolation(f"bus id must be an integer, got {self.id!r}")


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float  # per-unit, > 0
    flow_limit_mw: float
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise InvariantViolation(f"branch {self.id}: from_bus == to_bus == {self.from_bus}")
        if not (self.reactance > 0.0) or not math.isfinite(self.reactance):
            raise InvariantViolation(f"branch {self.id}: reactance must be finite and > 0, got {self.reactance}")
        if not (self.flow_limit_mw > 0.0):
            raise InvariantViolation(f"branch {self.id}: flow_limit_mw must be > 0, got {self.flow_limit_mw}")


@dataclass(frozen=True)
class GenDynamics:
    inertia_h: float  # seconds, on the machine base
    damping_d: float  # pu torque per pu speed deviation, machine base
    xd_prime: float  # transient reactance, pu on the machine base
    mva_base: float

    def __post_init__(self):
        if not (self.inertia_h > 0.0):
            raise InvariantViolation(f"inertia_h must be > 0, got {self.inertia_h}")
        if self.damping_d < 0.0:
            raise InvariantViolation(f"damping_d must be >= 0, got {self.damping_d}")
        if not (self.xd_prime > 0.0):
            raise InvariantViolation(f"xd_prime must be > 0, got {self.xd_prime}")
        if not (self.mva_base > 0.0):
            raise InvariantViolation(f"mva_base must be > 0, got {self.mva_base}")


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p0_mw: float
    p_min_mw: float
    p_max_mw: float
    cost_a: float  # $/hr constant term
    cost_b: float  # $/MWh linear term
    cost_c: float  # $/MW^2h quadratic term, >= 0
    dynamics: GenDynamics | None = None

    def __post_init__(self):
        if self.p_min_mw > self.p_max_mw:
            raise InvariantViolation(f"generator {self.id}: p_min_mw {self.p_min_mw} > p_max_mw {self.p_max_mw}")
        if not (self.p_min_mw - 1e-9 <= self.p0_mw <= self.p_max_mw + 1e-9):
            raise InvariantViolation(
                f"generator {self.id}: p0_mw {self.p0_mw} outside [{self.p_min_mw}, {self.p_max_mw}]"
            )
        if self.cost_c < 0.0:
            raise InvariantViolation(f"generator {self.id}: cost_c must be >= 0, got {self.cost_c}")

    def marginal_cost_at(self, p_mw: float) -> float:
        return self.cost_b + 2.0 * self.cost_c * p_mw


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    l0_mw: float
    l_min_mw: float
    l_max_mw: float
    shed_cost: float  # $/MWh of shed energy

    def __post_init__(self):
        if self.l_min_mw < 0.0:
            raise InvariantViolation(f"load {self.id}: l_min_mw must be >= 0, got {self.l_min_mw}")
        if self.l_min_mw > self.l_max_mw:
            raise InvariantViolation(f"load {self.id}: l_min_mw {self.l_min_mw} > l_max_mw {self.l_max_mw}")
        if not (self.l_min_mw - 1e-9 <= self.l0_mw <= self.l_max_mw + 1e-9):
            raise InvariantViolation(f"load {self.id}: l0_mw {self.l0_mw} outside [{self.l_min_mw}, {self.l_max_mw}]")


@dataclass(frozen=True)
class Network:
    """Immutable snapshot of a grid: topology plus one operating point.

    Component tuples are sorted by id at construction; every matrix-valued
    computation in the package uses these orderings as its axes.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    mva_base: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.id)))
        object.__setattr__(self, "branches", tuple(sorted(self.branches, key=lambda b: b.id)))
        object.__setattr__(self, "generators", tuple(sorted(self.generators, key=lambda g: g.id)))
        object.__setattr__(self, "loads", tuple(sorted(self.loads, key=lambda l: l.id)))
        self._check_invariants()

    # -- derived indexes ----------------------------------------------------

    @cached_property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.branches)

    @cached_property
    def branch_by_id(self) -> dict[int, Branch]:
        return {b.id: b for b in self.branches}

    @cached_property
    def reference_bus(self) -> int:
        return next(b.id for b in self.buses if b.is_reference)

    @cached_property
    def in_service_branches(self) -> tuple[Branch, ...]:
        return tuple(b for b in self.branches if b.in_service)

    @cached_property
    def total_load_mw(self) -> float:
        return sum(l.l0_mw for l in self.loads)

    @cached_property
    def total_generation_mw(self) -> float:
        return sum(g.p0_mw for g in self.generators)

    def base_injections_mw(self) -> list[float]:
        """Net MW injection per bus (generation minus load), in bus order."""
        inj = [0.0] * len(self.buses)
        for g in self.generators:
            inj[self.bus_index[g.bus]] += g.p0_mw
        for l in self.loads:
            inj[self.bus_index[l.bus]] -= l.l0_mw
        return inj

    @cached_property
    def islands(self) -> tuple[frozenset[int], ...]:
        return connected_components(self)

    @property
    def is_connected(self) -> bool:
        return len(self.islands) == 1

    # -- validation ---------------------------------------------------------

    def _check_invariants(self):
        for name, comps in (
            ("bus", self.buses),
            ("branch", self.branches),
            ("generator", self.generators),
            ("load", self.loads),
        ):
            seen = set()
            for c in comps:
                if c.id in seen:
                    raise InvariantViolation(f"duplicate {name} id {c.id}")
                seen.add(c.id)
        if not self.buses:
            raise InvariantViolation("network has no buses")
        refs = [b.id for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise InvariantViolation(f"exactly one reference bus required, found {refs or 'none'}")
        bus_set = set(self.bus_ids)
        for br in self.branches:
            if br.from_bus not in bus_set or br.to_bus not in bus_set:
                raise InvariantViolation(f"branch {br.id} references unknown bus {br.from_bus}/{br.to_bus}")
        for g in self.generators:
            if g.bus not in bus_set:
                raise InvariantViolation(f"generator {g.id} references unknown bus {g.bus}")
        for l in self.loads:
            if l.bus not in bus_set:
                raise InvariantViolation(f"load {l.id} references unknown bus {l.bus}")
        if not (self.mva_base > 0.0):
            raise InvariantViolation(f"mva_base must be > 0, got {self.mva_base}")
        imbalance = self.total_generation_mw - self.total_load_mw
        if abs(imbalance) > BALANCE_TOL_PU * self.mva_base:
            raise InvariantViolation(
                f"operating point unbalanced: generation {self.total_generation_mw:.6f} MW, "
                f"load {self.total_load_mw:.6f} MW"
            )
        if self.generators and self.loads:
            worst_marginal = max(g.marginal_cost_at(g.p_max_mw) for g in self.generators)
            for l in self.loads:
                if l.shed_cost <= worst_marginal:
                    raise InvariantViolation(
                        f"load {l.id}: shed_cost {l.shed_cost} must exceed the highest generator "
                        f"marginal cost at p_max ({worst_marginal})"
                    )


def connected_components(net: Network, exclude_branches: frozenset[int] = frozenset()) -> tuple[frozenset[int], ...]:
    """Connected components over in-service branches, minus any excluded ids.

    Returned as frozensets of bus ids, largest first (ties broken by
    smallest member) so the ordering is deterministic.
    """
    adj: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for br in net.branches:
        if br.in_service and br.id not in exclude_branches:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    unseen = set(net.bus_ids)
    comps = []
    while unseen:
        start = min(unseen)
        stack = [start]
        unseen.discard(start)
        comp = {start}
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v in unseen:
                    unseen.discard(v)
                    comp.add(v)
                    stack.append(v)
        comps.append(frozenset(comp))
    comps.sort(key=lambda c: (-len(c), min(c)))
    return tuple(comps)


# ---------------------------------------------------------------------------
# MATPOWER-format parsing


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([0-9.eE+-]+)\s*;")


def _parse_matrix(text: str, name: str) -> list[list[float]]:
    for m in _MATRIX_RE.finditer(text):
        if m.group(1) == name:
            rows = []
            for lineno, raw in enumerate(m.group(2).splitlines(), 1):
                line = raw.split("%", 1)[0].strip().rstrip(";")
                if not line:
                    continue
                try:
                    rows.append([float(tok) for tok in line.split()])
                except ValueError as exc:
                    raise ParseError(f"mpc.{name} row {lineno}: {exc}") from None
            return rows
    raise ParseError(f"missing mpc.{name} matrix")


def parse_matpower_case(text: str, dynamics_sidecar: str | None = None) -> Network:
    """Parse a MATPOWER-style .m case into a Network.

    Supported subset: bus/gen/branch/gencost matrices with polynomial costs of
    degree two or less. Transformer tap ratios are ignored (the branch is kept
    as its series reactance), resistances and line charging are dropped, and
    out-of-service generators are dropped; a nonzero phase-shift angle is
    rejected since it would inject flow. Branches with a zero
    rateA get DEFAULT_FLOW_LIMIT_MW. Because bus demand is fixed while the
    case's Pg column rarely sums to it exactly, generator set-points are
    rescaled within their limits to balance total load.

    Generators and loads get 1-based ids in row order (loads in bus order,
    one per bus with nonzero Pd), which is what a dynamics sidecar must
    reference.
    """
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR_RE.finditer(text)}
    if "baseMVA" not in scalars:
        raise ParseError("missing mpc.baseMVA")
    mva_base = scalars["baseMVA"]

    bus_rows = _parse_matrix(text, "bus")
    gen_rows = _parse_matrix(text, "gen")
    branch_rows = _parse_matrix(text, "branch")
    try:
        cost_rows = _parse_matrix(text, "gencost")
    except ParseError:
        cost_rows = []

    buses = []
    loads = []
    ref_count = 0
    for i, row in enumerate(bus_rows, 1):
        if len(row) < 4:
            raise ParseError(f"mpc.bus row {i}: expected at least 4 columns, got {len(row)}")
        bus_id = int(row[0])
        bus_type = int(row[1])
        if bus_type == 4:
            raise UnsupportedCaseFeature(f"mpc.bus row {i}: isolated (type 4) bus {bus_id}")
        is_ref = bus_type == 3
        ref_count += is_ref
        buses.append(Bus(id=bus_id, is_reference=is_ref))
        pd = row[2]
        if pd != 0.0:
            if pd < 0.0:
                raise UnsupportedCaseFeature(f"mpc.bus row {i}: negative demand {pd} at bus {bus_id}")
            loads.append({"bus": bus_id, "l0": pd})
    if ref_count != 1:
        raise ParseError(f"expected exactly one type-3 bus, found {ref_count}")

    branches = []
    for i, row in enumerate(branch_rows, 1):
        if len(row) < 11:
            raise ParseError(f"mpc.branch row {i}: expected at least 11 columns, got {len(row)}")
        status = int(row[10])
        x = row[3]
        if x <= 0.0:
            raise UnsupportedCaseFeature(f"mpc.branch row {i}: non-positive reactance {x}")
        if row[9] != 0.0:
            # a tap ratio drops out of the DC equations but a shift angle
            # would inject flow the model cannot represent
            raise UnsupportedCaseFeature(f"mpc.branch row {i}: phase-shift angle {row[9]} unsupported")
        rate_a = row[5]
        branches.append(
            Branch(
                id=i,
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                reactance=x,
                flow_limit_mw=rate_a if rate_a > 0.0 else DEFAULT_FLOW_LIMIT_MW,
                in_service=status != 0,
            )
        )

    raw_gens = []
    for i, row in enumerate(gen_rows, 1):
        if len(row) < 10:
            raise ParseError(f"mpc.gen row {i}: expected at least 10 columns, got {len(row)}")
        if int(row[7]) == 0:
            continue  # out of service
        cost = (0.0, 0.0, 0.0)
        if cost_rows:
            if len(cost_rows) != len(gen_rows):
                raise ParseError(f"mpc.gencost has {len(cost_rows)} rows for {len(gen_rows)} generators")
            crow = cost_rows[i - 1]
            if int(crow[0]) != 2:
                raise UnsupportedCaseFeature(f"mpc.gencost row {i}: only polynomial (model 2) costs supported")
            ncoef = int(crow[3])
            if ncoef > 3:
                raise UnsupportedCaseFeature(f"mpc.gencost row {i}: polynomial degree {ncoef - 1} > 2")
            coefs = ([0.0] * (3 - ncoef)) + list(crow[4 : 4 + ncoef])
            cost = (coefs[2], coefs[1], coefs[0])  # (a, b, c)
        raw_gens.append(
            {
                "bus": int(row[0]),
                "p0": row[1],
                "p_max": row[8],
                "p_min": row[9],
                "cost": cost,
            }
        )

    total_load = sum(l["l0"] for l in loads)
    p0s = _balance_setpoints(
        [g["p0"] for g in raw_gens],
        [g["p_min"] for g in raw_gens],
        [g["p_max"] for g in raw_gens],
        total_load,
    )

    max_marginal = 0.0
    for g, p0 in zip(raw_gens, p0s):
        a, b, c = g["cost"]
        max_marginal = max(max_marginal, b + 2.0 * c * g["p_max"])
    shed_cost = 10.0 * max(max_marginal, 1.0)

    generators = tuple(
        Generator(
            id=i,
            bus=g["bus"],
            p0_mw=p0,
            p_min_mw=g["p_min"],
            p_max_mw=g["p_max"],
            cost_a=g["cost"][0],
            cost_b=g["cost"][1],
            cost_c=g["cost"][2],
        )
        for i, (g, p0) in enumerate(zip(raw_gens, p0s), 1)
    )
    load_objs = tuple(
        Load(id=i, bus=l["bus"], l0_mw=l["l0"], l_min_mw=0.0, l_max_mw=l["l0"], shed_cost=shed_cost)
        for i, l in enumerate(loads, 1)
    )

    net = Network(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=generators,
        loads=load_objs,
        mva_base=mva_base,
    )
    if not net.is_connected:
        raise InvariantViolation(f"case is not connected: {len(net.islands)} islands")
    if dynamics_sidecar is not None:
        net = apply_dynamics_sidecar(net, dynamics_sidecar)
    return net


def _balance_setpoints(p0: list[float], p_min: list[float], p_max: list[float], target: float) -> list[float]:
    """Scale set-points to sum to target, clipping at limits and spreading
    any residual over the remaining headroom."""
    if not p0:
        if abs(target) > 1e-9:
            raise InvariantViolation("case has load but no in-service generators")
        return []
    lo, hi = sum(p_min), sum(p_max)
    if not (lo - 1e-9 <= target <= hi + 1e-9):
        raise InvariantViolation(f"total load {target} MW outside dispatchable range [{lo}, {hi}] MW")
    total = sum(p0)
    if total > 0.0:
        p = [min(max(v * target / total, lo_i), hi_i) for v, lo_i, hi_i in zip(p0, p_min, p_max)]
    else:
        p = list(p_min)
    for _ in range(len(p) + 1):
        residual = target - sum(p)
        if abs(residual) <= 1e-9:
            break
        if residual > 0.0:
            room = [hi_i - v for v, hi_i in zip(p, p_max)]
        else:
            room = [lo_i - v for v, lo_i in zip(p, p_min)]  # negative
        total_room = sum(room)
        if abs(total_room) < 1e-12:
            raise InvariantViolation("cannot balance dispatch within generator limits")
        p = [
            min(max(v + residual * r / total_room, lo_i), hi_i)
            for v, r, lo_i, hi_i in zip(p, room, p_min, p_max)
        ]
    return p


def apply_dynamics_sidecar(net: Network, sidecar_text: str) -> Network:
    """Merge a dynamics/shed-cost sidecar JSON into a parsed Network.

    Shape: {"generator_dynamics": [{"id", "inertia_h", "damping_d",
    "xd_prime", "mva_base"}, ...], "load_shed_costs": [{"id", "shed_cost"},
    ...]}; entries are matched to components by id.
    """
    try:
        doc = json.loads(sidecar_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"sidecar is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$: sidecar must be a JSON object")

    gens = {g.id: g for g in net.generators}
    for i, entry in enumerate(doc.get("generator_dynamics", [])):
        path = f"$.generator_dynamics[{i}]"
        gid = _require_int(entry, "id", path)
        if gid not in gens:
            raise SchemaError(f"{path}.id: unknown generator id {gid}")
        dyn = GenDynamics(
            inertia_h=_require_number(entry, "inertia_h", path),
            damping_d=_require_number(entry, "damping_d", path),
            xd_prime=_require_number(entry, "xd_prime", path),
            mva_base=_require_number(entry, "mva_base", path),
        )
        gens[gid] = replace(gens[gid], dynamics=dyn)

    load_map = {l.id: l for l in net.loads}
    for i, entry in enumerate(doc.get("load_shed_costs", [])):
        path = f"$.load_shed_costs[{i}]"
        lid = _require_int(entry, "id", path)
        if lid not in load_map:
            raise SchemaError(f"{path}.id: unknown load id {lid}")
        load_map[lid] = replace(load_map[lid], shed_cost=_require_number(entry, "shed_cost", path))

    return replace(net, generators=tuple(gens.values()), loads=tuple(load_map.values()))


# ---------------------------------------------------------------------------
# Native JSON format


def _require(doc: dict, key: str, path: str):
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected an object")
    if key not in doc:
        raise SchemaError(f"{path}.{key}: missing required field")
    return doc[key]


def _require_number(doc: dict, key: str, path: str) -> float:
    v = _require(doc, key, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}: expected a number, got {type(v).__name__}")
    return float(v)


def _require_int(doc: dict, key: str, path: str) -> int:
    v = _require(doc, key, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{path}.{key}: expected an integer, got {type(v).__name__}")
    return v


def _require_list(doc: dict, key: str, path: str) -> list:
    v = _require(doc, key, path)
    if not isinstance(v, list):
        raise SchemaError(f"{path}.{key}: expected an array, got {type(v).__name__}")
    return v


def _optional_bool(doc: dict, key: str, path: str, default: bool) -> bool:
    v = doc.get(key, default)
    if not isinstance(v, bool):
        raise SchemaError(f"{path}.{key}: expected a boolean, got {type(v).__name__}")
    return v


def parse_json_case(text: str) -> Network:
    """Parse the native JSON case format into a Network.

    Top level: buses, branches, generators, loads (arrays) and mva_base.
    Field names mirror the component dataclasses; generator dynamics may be
    embedded as a "dynamics" object or null.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"case is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("$: case must be a JSON object")

    buses = []
    for i, b in enumerate(_require_list(doc, "buses", "$")):
        path = f"$.buses[{i}]"
        buses.append(Bus(id=_require_int(b, "id", path), is_reference=_optional_bool(b, "is_reference", path, False)))

    branches = []
    for i, b in enumerate(_require_list(doc, "branches", "$")):
        path = f"$.branches[{i}]"
        try:
            branches.append(
                Branch(
                    id=_require_int(b, "id", path),
                    from_bus=_require_int(b, "from_bus", path),
                    to_bus=_require_int(b, "to_bus", path),
                    reactance=_require_number(b, "reactance", path),
                    flow_limit_mw=_require_number(b, "flow_limit_mw", path),
                    in_service=_optional_bool(b, "in_service", path, True),
                )
            )
        except InvariantViolation as exc:
            raise SchemaError(f"{path}: {exc}") from None

    generators = []
    for i, g in enumerate(_require_list(doc, "generators", "$")):
        path = f"$.generators[{i}]"
        dyn = None
        if g.get("dynamics") is not None:
            dpath = f"{path}.dynamics"
            d = g["dynamics"]
            try:
                dyn = GenDynamics(
                    inertia_h=_require_number(d, "inertia_h", dpath),
                    damping_d=_require_number(d, "damping_d", dpath),
                    xd_prime=_require_number(d, "xd_prime", dpath),
                    mva_base=_require_number(d, "mva_base", dpath),
                )
            except InvariantViolation as exc:
                raise SchemaError(f"{dpath}: {exc}") from None
        try:
            generators.append(
                Generator(
                    id=_require_int(g, "id", path),
                    bus=_require_int(g, "bus", path),
                    p0_mw=_require_number(g, "p0_mw", path),
                    p_min_mw=_require_number(g, "p_min_mw", path),
                    p_max_mw=_require_number(g, "p_max_mw", path),
                    cost_a=_require_number(g, "cost_a", path),
                    cost_b=_require_number(g, "cost_b", path),
                    cost_c=_require_number(g, "cost_c", path),
                    dynamics=dyn,
                )
            )
        except InvariantViolation as exc:
            raise SchemaError(f"{path}: {exc}") from None

    loads = []
    for i, l in enumerate(_require_list(doc, "loads", "$")):
        path = f"$.loads[{i}]"
        try:
            loads.append(
                Load(
                    id=_require_int(l, "id", path),
                    bus=_require_int(l, "bus", path),
                    l0_mw=_require_number(l, "l0_mw", path),
                    l_min_mw=_require_number(l, "l_min_mw", path),
                    l_max_mw=_require_number(l, "l_max_mw", path),
                    shed_cost=_require_number(l, "shed_cost", path),
                )
            )
        except InvariantViolation as exc:
            raise SchemaError(f"{path}: {exc}") from None

    mva_base = doc.get("mva_base", 100.0)
    if isinstance(mva_base, bool) or not isinstance(mva_base, (int, float)):
        raise SchemaError(f"$.mva_base: expected a number, got {type(mva_base).__name__}")

    net = Network(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        loads=tuple(loads),
        mva_base=float(mva_base),
    )
    if not net.is_connected:
        raise InvariantViolation(f"case is not connected: {len(net.islands)} islands")
    return net


def serialize_network(net: Network) -> dict:
    """Network as a plain dict in the native JSON shape (full fidelity)."""
    return {
        "mva_base": net.mva_base,
        "buses": [{"id": b.id, "is_reference": b.is_reference} for b in net.buses],
        "branches": [
            {
                "id": b.id,
                "from_bus": b.from_bus,
                "to_bus": b.to_bus,
                "reactance": b.reactance,
                "flow_limit_mw": b.flow_limit_mw,
                "in_service": b.in_service,
            }
            for b in net.branches
        ],
        "generators": [
            {
                "id": g.id,
                "bus": g.bus,
                "p0_mw": g.p0_mw,
                "p_min_mw": g.p_min_mw,
                "p_max_mw": g.p_max_mw,
                "cost_a": g.cost_a,
                "cost_b": g.cost_b,
                "cost_c": g.cost_c,
                "dynamics": None
                if g.dynamics is None
                else {
                    "inertia_h": g.dynamics.inertia_h,
                    "damping_d": g.dynamics.damping_d,
                    "xd_prime": g.dynamics.xd_prime,
                    "mva_base": g.dynamics.mva_base,
                },
            }
            for g in net.generators
        ],
        "loads": [
            {
                "id": l.id,
                "bus": l.bus,
                "l0_mw": l.l0_mw,
                "l_min_mw": l.l_min_mw,
                "l_max_mw": l.l_max_mw,
                "shed_cost": l.shed_cost,
            }
            for l in net.loads
        ],
    }


def canonical_json(net: Network) -> str:
    """Deterministic JSON text for a Network: sorted keys, stable float repr.

    Equal Networks serialize to identical bytes, so the output is safe to
    hash or diff.
    """
    return json.dumps(serialize_network(net), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# Operating-point and topology edits


def apply_outage(net: Network, branch_ids: frozenset[int] | set[int]) -> Network:
    """Take listed branches out of service; returns a new Network.

    Branches must exist and be in service. The result may be islanded;
    callers that need connectivity should check `is_connected`.
    """
    wanted = set(branch_ids)
    by_id = net.branch_by_id
    for bid in sorted(wanted):
        if bid not in by_id:
            raise CaseError(f"unknown branch id {bid}")
        if not by_id[bid].in_service:
            raise CaseError(f"branch {bid} is already out of service")
    return replace(
        net,
        branches=tuple(replace(b, in_service=False) if b.id in wanted else b for b in net.branches),
    )


def with_operating_point(net: Network, p0_mw, l0_mw) -> Network:
    """New Network with replaced generator set-points and load levels.

    Arrays follow generator/load order. Values are clipped to component
    limits only by validation (out-of-range values raise).
    """
    if len(p0_mw) != len(net.generators):
        raise CaseError(f"expected {len(net.generators)} generator set-points, got {len(p0_mw)}")
    if len(l0_mw) != len(net.loads):
        raise CaseError(f"expected {len(net.loads)} load levels, got {len(l0_mw)}")
    return replace(
        net,
        generators=tuple(replace(g, p0_mw=float(p)) for g, p in zip(net.generators, p0_mw)),
        loads=tuple(replace(l, l0_mw=float(v)) for l, v in zip(net.loads, l0_mw)),
    )


def scale_dispatch_to_load(net: Network, l0_mw) -> Network:
    """New Network at the given load levels, with generation rebalanced to
    match (proportional scaling, clipped at limits)."""
    l0 = [float(v) for v in l0_mw]
    p0 = _balance_setpoints(
        [g.p0_mw for g in net.generators],
        [g.p_min_mw for g in net.generators],
        [g.p_max_mw for g in net.generators],
        sum(l0),
    )
    return with_operating_point(net, p0, l0)
