"""Full Newton-Raphson AC power flow in polar coordinates.

Bus typing follows the generator list: the slack generator's bus holds the
angle reference and absorbs the power balance, every other generator bus is
PV (fixed P and V), all remaining buses are PQ. There is no PV-to-PQ
switching; reactive limits are checked afterwards by static_violations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from tscopf.grid import GridCase

log = logging.getLogger(__name__)

#: Convergence tolerance on the largest power mismatch entry (p.u.).
TOLERANCE = 1.0e-8
#: Newton iteration cap.
MAX_ITERATIONS = 20


class PowerFlowError(ValueError):
    """Bad inputs to the solver or use of an unconverged solution."""


@dataclass(frozen=True)
class DispatchPoint:
    """Control vector: voltage setpoint per generator bus (case order) and
    active power per non-slack generator (case order, slack omitted)."""

    v_c: np.ndarray
    p_c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_c", np.asarray(self.v_c, dtype=float))
        object.__setattr__(self, "p_c", np.asarray(self.p_c, dtype=float))


@dataclass
class PowerFlowSolution:
    converged: bool
    v: np.ndarray
    theta: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray
    p_line: np.ndarray
    iterations: int
    max_mismatch: float
    diagnostic: str = ""
    # boundary conditions the solve was run with, kept so downstream
    # consumers (dynamic simulation, reports) see the same loads
    p_load: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q_load: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class StaticViolationReport:
    """Per-quantity over-limit amounts (all >= 0, p.u.). Zero everywhere
    means the operating point satisfies the static limits."""

    v_over: np.ndarray
    pg_over: np.ndarray
    qg_over: np.ndarray
    pl_over: np.ndarray

    def total(self) -> float:
        return float(
            self.v_over.sum() + self.pg_over.sum()
            + self.qg_over.sum() + self.pl_over.sum()
        )

    def any(self) -> bool:
        return self.total() > 0.0


def _injections(case: GridCase, dispatch: DispatchPoint,
                p_load: np.ndarray, q_load: np.ndarray):
    """Specified complex injections per bus and the PV/PQ partition."""
    n = case.n_bus
    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    np.subtract.at(p_spec, case.load_bus_pos, p_load)
    np.subtract.at(q_spec, case.load_bus_pos, q_load)
    for j, gpos in enumerate(case.nonslack_gens):
        p_spec[case.gen_bus_pos[gpos]] += dispatch.p_c[j]
    slack_pos = case.gen_bus_pos[case.slack_gen]
    pv = np.array([case.gen_bus_pos[k] for k in case.nonslack_gens], dtype=int)
    mask = np.ones(n, dtype=bool)
    mask[case.gen_bus_pos] = False
    pq = np.flatnonzero(mask)
    return p_spec, q_spec, slack_pos, pv, pq


def solve_nr(
    case: GridCase,
    dispatch: DispatchPoint,
    loads: tuple[np.ndarray, np.ndarray] | None = None,
    ybus: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Solve the AC power flow for one dispatch point.

    ``loads`` overrides the case base loads with (p, q) vectors in load
    order; ``ybus`` lets callers reuse a prebuilt admittance matrix.
    Starts flat (non-slack angles 0, PQ magnitudes 1, PV magnitudes at
    their setpoints) and iterates the full Newton system until the
    largest mismatch entry is below TOLERANCE.
    """
    from tscopf.grid import build_ybus

    if len(dispatch.v_c) != case.n_gen:
        raise PowerFlowError(
            f"v_c needs one entry per generator bus ({case.n_gen}), got {len(dispatch.v_c)}"
        )
    if len(dispatch.p_c) != case.n_gen - 1:
        raise PowerFlowError(
            f"p_c needs one entry per non-slack generator ({case.n_gen - 1}), "
            f"got {len(dispatch.p_c)}"
        )
    if loads is None:
        p_load = np.array([l.p_base for l in case.loads])
        q_load = np.array([l.q_base for l in case.loads])
    else:
        p_load = np.asarray(loads[0], dtype=float)
        q_load = np.asarray(loads[1], dtype=float)
        if len(p_load) != case.n_load or len(q_load) != case.n_load:
            raise PowerFlowError("load vectors must match the case load count")
    if ybus is None:
        ybus = build_ybus(case)

    n = case.n_bus
    p_spec, q_spec, slack_pos, pv, pq = _injections(case, dispatch, p_load, q_load)
    pvpq = np.concatenate([pv, pq]).astype(int)
    npv, npq = len(pv), len(pq)

    vm = np.ones(n)
    va = np.zeros(n)
    vm[case.gen_bus_pos] = dispatch.v_c

    def mismatch(v):
        s = v * np.conj(ybus @ v)
        dp = s.real - p_spec
        dq = s.imag - q_spec
        return np.concatenate([dp[pvpq], dq[pq]]), s

    v = vm * np.exp(1j * va)
    f, s = mismatch(v)
    max_mis = float(np.abs(f).max()) if len(f) else 0.0
    iterations = 0
    diagnostic = ""
    converged = max_mis <= TOLERANCE

    while not converged and iterations < MAX_ITERATIONS:
        ibus = ybus @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vnorm = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            diagnostic = "singular_jacobian"
            break
        if not np.all(np.isfinite(dx)):
            diagnostic = "diverged"
            break
        va[pvpq] -= dx[: npv + npq]
        vm[pq] -= dx[npv + npq:]
        if np.any(vm <= 0) or not np.all(np.isfinite(vm)):
            diagnostic = "diverged"
            break
        v = vm * np.exp(1j * va)
        f, s = mismatch(v)
        max_mis = float(np.abs(f).max())
        iterations += 1
        converged = max_mis <= TOLERANCE

    if not converged and not diagnostic:
        diagnostic = "max_iterations"

    # recover generator outputs from the solved injections
    p_g = np.zeros(case.n_gen)
    q_g = np.zeros(case.n_gen)
    if converged:
        inj = s
        load_p_bus = np.zeros(n)
        load_q_bus = np.zeros(n)
        np.add.at(load_p_bus, case.load_bus_pos, p_load)
        np.add.at(load_q_bus, case.load_bus_pos, q_load)
        for k in range(case.n_gen):
            b = case.gen_bus_pos[k]
            q_g[k] = inj.imag[b] + load_q_bus[b]
            if k == case.slack_gen:
                p_g[k] = inj.real[b] + load_p_bus[b]
        for j, gpos in enumerate(case.nonslack_gens):
            p_g[gpos] = dispatch.p_c[j]
        p_line = _from_end_flows(case, v)
    else:
        p_line = np.zeros(len(case.branches))
        log.debug("power flow failed: %s (mismatch %.3e)", diagnostic, max_mis)

    return PowerFlowSolution(
        converged=converged,
        v=np.abs(v),
        theta=np.angle(v),
        p_g=p_g,
        q_g=q_g,
        p_line=p_line,
        iterations=iterations,
        max_mismatch=max_mis,
        diagnostic=diagnostic,
        p_load=p_load,
        q_load=q_load,
    )


def _from_end_flows(case: GridCase, v: np.ndarray) -> np.ndarray:
    """Active power entering each branch at its from end (p.u.)."""
    idx = case.bus_index
    p = np.zeros(len(case.branches))
    for k, br in enumerate(case.branches):
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_sh
        t = br.tap
        i_from = (ys + ysh) / (t * t) * v[i] - ys / t * v[j]
        p[k] = (v[i] * np.conj(i_from)).real
    return p


def static_violations(case: GridCase, sol: PowerFlowSolution) -> StaticViolationReport:
    """Over-limit amounts for voltages, generator P and Q, and from-end
    branch flows. Requires a converged solution."""
    if not sol.converged:
        raise PowerFlowError("static_violations needs a converged power flow")

    def over(val, lo, hi):
        return np.maximum(val - hi, 0.0) + np.maximum(lo - val, 0.0)

    v_lo = np.array([b.v_min for b in case.buses])
    v_hi = np.array([b.v_max for b in case.buses])
    pg_lo = np.array([g.p_min for g in case.generators])
    pg_hi = np.array([g.p_max for g in case.generators])
    qg_lo = np.array([g.q_min for g in case.generators])
    qg_hi = np.array([g.q_max for g in case.generators])
    pl_lo = np.array([br.p_min for br in case.branches])
    pl_hi = np.array([br.p_max for br in case.branches])
    return StaticViolationReport(
        v_over=over(sol.v, v_lo, v_hi),
        pg_over=over(sol.p_g, pg_lo, pg_hi),
        qg_over=over(sol.q_g, qg_lo, qg_hi),
        pl_over=over(sol.p_line, pl_lo, pl_hi),
    )


def generation_cost(case: GridCase, p_g: np.ndarray) -> float:
    """Total quadratic generation cost sum(c0) + c1.P + c2.P^2."""
    p = np.asarray(p_g, dtype=float)
    if len(p) != case.n_gen:
        raise PowerFlowError("p_g must have one entry per generator")
    c0 = np.array([g.c0 for g in case.generators])
    c1 = np.array([g.c1 for g in case.generators])
    c2 = np.array([g.c2 for g in case.generators])
    return float(c0.sum() + c1 @ p + c2 @ (p * p))
