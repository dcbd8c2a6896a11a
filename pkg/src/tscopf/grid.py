"""Static network model: buses, branches, generators, loads, contingencies.

All electrical quantities are per-unit on the case MVA base. Bus ids are
arbitrary integers; matrix rows/columns follow the position of each bus in
``GridCase.buses``. Branches are referenced by their position in
``GridCase.branches``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

#: Bolted three-phase fault modelled as a large shunt conductance (p.u.).
FAULT_ADMITTANCE = 1.0e7


class CaseError(ValueError):
    """A case file failed to parse or violates a model invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float
    v_max: float


@dataclass(frozen=True)
class Branch:
    """Pi-model branch. ``b_sh`` is the total line charging susceptance,
    split half per end. ``tap`` is the off-nominal turns ratio at the
    from end (1.0 for plain lines)."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float
    p_min: float
    p_max: float
    tap: float = 1.0


@dataclass(frozen=True)
class Generator:
    """Dispatchable machine with a quadratic cost c0 + c1*P + c2*P^2 and
    classical-model dynamic data (inertia h in seconds, damping d in p.u.,
    transient reactance xd_p in p.u.)."""

    bus: int
    slack: bool
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c0: float
    c1: float
    c2: float
    h: float
    d: float
    xd_p: float


@dataclass(frozen=True)
class Load:
    bus: int
    p_base: float
    q_base: float


@dataclass(frozen=True)
class ContingencySpec:
    """Three-phase bus fault at one end of a branch, cleared by tripping
    that branch at ``t_clear``."""

    branch: int
    fault_end: str  # "from" or "to"
    t_fault: float
    t_clear: float


@dataclass(frozen=True)
class GridCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    contingencies: tuple[ContingencySpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        object.__setattr__(self, "contingencies", tuple(self.contingencies))
        _validate(self)

    # -- index helpers -------------------------------------------------

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """Map bus id -> matrix position."""
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_load(self) -> int:
        return len(self.loads)

    @cached_property
    def slack_gen(self) -> int:
        """Position of the slack generator in ``generators``."""
        return next(k for k, g in enumerate(self.generators) if g.slack)

    @cached_property
    def gen_bus_pos(self) -> np.ndarray:
        """Matrix position of each generator's bus."""
        return np.array([self.bus_index[g.bus] for g in self.generators])

    @cached_property
    def load_bus_pos(self) -> np.ndarray:
        return np.array([self.bus_index[l.bus] for l in self.loads])

    @cached_property
    def nonslack_gens(self) -> tuple[int, ...]:
        """Generator positions excluding the slack, in case order."""
        return tuple(k for k in range(self.n_gen) if k != self.slack_gen)


def _validate(case: GridCase) -> None:
    if not case.base_mva > 0:
        raise CaseError(f"base_mva must be positive, got {case.base_mva}")
    if not case.buses:
        raise CaseError("case has no buses")
    seen: set[int] = set()
    for k, b in enumerate(case.buses):
        if b.id in seen:
            raise CaseError(f"buses[{k}]: duplicate bus id {b.id}")
        seen.add(b.id)
        if not (0.0 < b.v_min < b.v_max):
            raise CaseError(
                f"buses[{k}] (id {b.id}): need 0 < v_min < v_max, "
                f"got ({b.v_min}, {b.v_max})"
            )
    for k, br in enumerate(case.branches):
        for end, bid in (("from_bus", br.from_bus), ("to_bus", br.to_bus)):
            if bid not in seen:
                raise CaseError(f"branches[{k}]: {end} references unknown bus {bid}")
        if br.x == 0.0:
            raise CaseError(f"branches[{k}]: series reactance x must be nonzero")
        if br.p_min > br.p_max:
            raise CaseError(f"branches[{k}]: p_min > p_max")
        if not br.tap > 0:
            raise CaseError(f"branches[{k}]: tap must be positive, got {br.tap}")
    n_slack = 0
    gen_buses: set[int] = set()
    for k, g in enumerate(case.generators):
        if g.bus not in seen:
            raise CaseError(f"generators[{k}]: references unknown bus {g.bus}")
        if g.bus in gen_buses:
            raise CaseError(
                f"generators[{k}]: bus {g.bus} already has a generator "
                "(one machine per bus)"
            )
        gen_buses.add(g.bus)
        n_slack += bool(g.slack)
        if g.p_min > g.p_max or g.q_min > g.q_max:
            raise CaseError(f"generators[{k}]: inverted limit pair")
        if not (g.h > 0 and g.xd_p > 0 and g.d >= 0):
            raise CaseError(f"generators[{k}]: need h > 0, xd_p > 0, d >= 0")
    if n_slack != 1:
        raise CaseError(f"exactly one slack generator required, found {n_slack}")
    for k, l in enumerate(case.loads):
        if l.bus not in seen:
            raise CaseError(f"loads[{k}]: references unknown bus {l.bus}")
        if l.p_base < 0:
            raise CaseError(f"loads[{k}]: p_base must be >= 0")
    for k, c in enumerate(case.contingencies):
        if not 0 <= c.branch < len(case.branches):
            raise CaseError(f"contingencies[{k}]: branch {c.branch} out of range")
        if c.fault_end not in ("from", "to"):
            raise CaseError(
                f"contingencies[{k}]: fault_end must be 'from' or 'to', "
                f"got {c.fault_end!r}"
            )
        if not 0.0 <= c.t_fault < c.t_clear:
            raise CaseError(
                f"contingencies[{k}]: need 0 <= t_fault < t_clear, "
                f"got ({c.t_fault}, {c.t_clear})"
            )


# -- case file io ------------------------------------------------------

_SECTIONS = {
    "buses": (Bus, ("id", "v_min", "v_max")),
    "branches": (Branch, ("from_bus", "to_bus", "r", "x", "b_sh", "p_min", "p_max", "tap")),
    "generators": (
        Generator,
        ("bus", "slack", "p_min", "p_max", "q_min", "q_max", "c0", "c1", "c2", "h", "d", "xd_p"),
    ),
    "loads": (Load, ("bus", "p_base", "q_base")),
    "contingencies": (ContingencySpec, ("branch", "fault_end", "t_fault", "t_clear")),
}

_OPTIONAL_FIELDS = {"tap": 1.0}


def load_case(path: str | Path) -> GridCase:
    """Parse a JSON case file and validate every model invariant.

    Raises CaseError with the offending file/section/field named.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise CaseError(f"cannot read case file {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise CaseError(f"{path}: top level must be an object")
    if "base_mva" not in raw:
        raise CaseError(f"{path}: missing field 'base_mva'")

    parts: dict[str, list] = {}
    for section, (cls, fields) in _SECTIONS.items():
        rows = raw.get(section, [])
        if not isinstance(rows, list):
            raise CaseError(f"{path}: section '{section}' must be a list")
        out = []
        for k, row in enumerate(rows):
            if not isinstance(row, dict):
                raise CaseError(f"{path}: {section}[{k}] must be an object")
            kwargs = {}
            for f in fields:
                if f in row:
                    kwargs[f] = row[f]
                elif f in _OPTIONAL_FIELDS:
                    kwargs[f] = _OPTIONAL_FIELDS[f]
                else:
                    raise CaseError(f"{path}: {section}[{k}]: missing field '{f}'")
            unknown = set(row) - set(fields)
            if unknown:
                raise CaseError(
                    f"{path}: {section}[{k}]: unknown field(s) {sorted(unknown)}"
                )
            out.append(cls(**kwargs))
        parts[section] = out

    try:
        return GridCase(base_mva=raw["base_mva"], **parts)
    except CaseError as e:
        raise CaseError(f"{path}: {e}") from e


def dump_case(case: GridCase, path: str | Path) -> None:
    """Write a case back to the JSON schema accepted by load_case."""
    doc: dict = {"base_mva": case.base_mva}
    for section, (cls, fields) in _SECTIONS.items():
        doc[section] = [
            {f: getattr(item, f) for f in fields} for item in getattr(case, section)
        ]
    Path(path).write_text(json.dumps(doc, indent=1))


# -- admittance matrices ----------------------------------------------


def build_ybus(case: GridCase, exclude_branch: int | None = None) -> np.ndarray:
    """Assemble the complex bus admittance matrix (n_bus x n_bus).

    Standard pi-model stamping with the tap on the from side. Passing
    ``exclude_branch`` leaves one branch out (used for post-fault
    topology).
    """
    n = case.n_bus
    idx = case.bus_index
    y = np.zeros((n, n), dtype=complex)
    for k, br in enumerate(case.branches):
        if k == exclude_branch:
            continue
        i = idx[br.from_bus]
        j = idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_sh
        t = br.tap
        y[i, i] += (ys + ysh) / (t * t)
        y[j, j] += ys + ysh
        y[i, j] -= ys / t
        y[j, i] -= ys / t
    return y


def _connected_without(case: GridCase, skip: int) -> bool:
    """True if every bus is still reachable when branch ``skip`` is removed."""
    n = case.n_bus
    if n <= 1:
        return True
    adj: list[list[int]] = [[] for _ in range(n)]
    idx = case.bus_index
    for k, br in enumerate(case.branches):
        if k == skip:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                stack.append(v)
    return count == n


def fault_ybus_pair(
    case: GridCase, contingency: ContingencySpec
) -> tuple[np.ndarray, np.ndarray]:
    """Faulted and post-fault admittance matrices for one contingency.

    The faulted matrix is the intact network with a large shunt
    (FAULT_ADMITTANCE) added on the diagonal of the faulted bus; the
    post-fault matrix is the network with the faulted branch removed.

    Raises CaseError if removing the branch islands the network.
    """
    if not 0 <= contingency.branch < len(case.branches):
        raise CaseError(f"contingency references branch {contingency.branch} out of range")
    br = case.branches[contingency.branch]
    fault_bus = br.from_bus if contingency.fault_end == "from" else br.to_bus
    if not _connected_without(case, contingency.branch):
        raise CaseError(
            f"removing branch {contingency.branch} "
            f"({br.from_bus}-{br.to_bus}) islands the network"
        )
    faulted = build_ybus(case)
    p = case.bus_index[fault_bus]
    faulted[p, p] += FAULT_ADMITTANCE
    postfault = build_ybus(case, exclude_branch=contingency.branch)
    return faulted, postfault
