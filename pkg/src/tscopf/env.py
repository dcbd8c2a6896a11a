"""Single-step dispatch environment with a four-stage reward.

A scenario (``CustomState``) is an incumbent dispatch plus a load draw.
The agent proposes a replacement dispatch; the environment solves the
power flow, simulates every contingency, and pays one of four reward
stages:

1. power flow fails to converge: -1000
2. some contingency goes transiently unstable: in [-999, -500)
3. static limits violated: in [-499, 0)
4. feasible and secure: lambda_opt * (1 - cost / max_cost), in [0, lambda_opt]

Stages never overlap, so the stage is recoverable from the value alone
(see ``stage_of_value``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from tscopf.dynamics import DynamicConfig, simulate
from tscopf.grid import GridCase, build_ybus, fault_ybus_pair
from tscopf.powerflow import (
    DispatchPoint,
    PowerFlowSolution,
    generation_cost,
    solve_nr,
    static_violations,
)

log = logging.getLogger(__name__)

STAGE_NON_CONVERGENT = "non_convergent"
STAGE_DYNAMIC = "dynamic_violation"
STAGE_STATIC = "static_violation"
STAGE_FEASIBLE = "feasible"

#: Stage order used for reporting (worst first).
STAGES = (STAGE_NON_CONVERGENT, STAGE_DYNAMIC, STAGE_STATIC, STAGE_FEASIBLE)

REWARD_VARIANTS = ("dt_s", "delta_max", "tsi")
OBSERVATION_VARIANTS = ("loads_only", "full_state")

NON_CONVERGENT_REWARD = -1000.0
DYNAMIC_FLOOR = -999.0
DYNAMIC_CEIL = -500.0
STATIC_FLOOR = -499.0

MAX_SAMPLE_ATTEMPTS = 10_000
MAX_INSECURE_ATTEMPTS = 100_000


class EnvError(ValueError):
    """Bad environment configuration or sampling failure."""


@dataclass(frozen=True)
class CustomState:
    """Incumbent dispatch (v_c per generator bus, p_c per non-slack
    generator) and the scenario loads (per load, in load order)."""

    v_c: np.ndarray
    p_c: np.ndarray
    p_d: np.ndarray
    q_d: np.ndarray

    def __post_init__(self):
        for name in ("v_c", "p_c", "p_d", "q_d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class EnvConfig:
    """Reward weights, sampling range, and variant switches.

    ``lambda_dyn`` may be a scalar, a per-contingency vector, or None to
    use the default 499 / (n_contingencies * t_end), which lands the
    dynamic stage exactly on [-999, -500).
    """

    lambda_dyn: float | np.ndarray | None = None
    lambda_st: float = 100.0
    lambda_opt: float = 2000.0
    load_range: tuple[float, float] = (0.7, 1.2)
    reward_variant: str = "dt_s"
    observation_variant: str = "loads_only"
    dyn_cfg: DynamicConfig = field(default_factory=DynamicConfig)

    def __post_init__(self):
        if self.reward_variant not in REWARD_VARIANTS:
            raise EnvError(f"unknown reward_variant {self.reward_variant!r}")
        if self.observation_variant not in OBSERVATION_VARIANTS:
            raise EnvError(f"unknown observation_variant {self.observation_variant!r}")
        lo, hi = self.load_range
        if not (0 < lo <= hi):
            raise EnvError(f"bad load_range {self.load_range}")
        if self.lambda_st <= 0 or self.lambda_opt <= 0:
            raise EnvError("penalty weights must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    """Stage label, scalar reward, and whatever was computed on the way:
    instability durations (s, per contingency), the static violation
    report, and the generation cost for feasible points."""

    stage: str
    value: float
    dt_s: np.ndarray | None = None
    static: object | None = None
    cost: float | None = None


def stage_of_value(value: float) -> str:
    """Recover the reward stage from the scalar value alone."""
    if value == NON_CONVERGENT_REWARD:
        return STAGE_NON_CONVERGENT
    if DYNAMIC_FLOOR <= value < DYNAMIC_CEIL:
        return STAGE_DYNAMIC
    if STATIC_FLOOR <= value < 0.0:
        return STAGE_STATIC
    if value >= 0.0:
        return STAGE_FEASIBLE
    raise EnvError(f"reward {value} falls outside every stage range")


def action_bounds(case: GridCase) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper bounds of the action vector: generator-bus voltage
    limits followed by non-slack active-power limits."""
    v_lo = np.array([case.buses[case.bus_index[g.bus]].v_min for g in case.generators])
    v_hi = np.array([case.buses[case.bus_index[g.bus]].v_max for g in case.generators])
    p_lo = np.array([case.generators[k].p_min for k in case.nonslack_gens])
    p_hi = np.array([case.generators[k].p_max for k in case.nonslack_gens])
    return np.concatenate([v_lo, p_lo]), np.concatenate([v_hi, p_hi])


def max_cost(case: GridCase) -> float:
    """Generation cost with every machine at its upper limit; the
    normalizer of the feasible-stage reward."""
    return generation_cost(case, np.array([g.p_max for g in case.generators]))


def resolve_lambda_dyn(case: GridCase, cfg: EnvConfig) -> np.ndarray:
    n = max(len(case.contingencies), 1)
    if cfg.lambda_dyn is None:
        lam = np.full(n, 499.0 / (n * cfg.dyn_cfg.t_end))
    else:
        lam = np.asarray(cfg.lambda_dyn, dtype=float) * np.ones(n)
    if np.any(lam <= 0):
        raise EnvError("lambda_dyn entries must be positive")
    return lam


def dynamic_penalty(
    dt_s: np.ndarray, spread_end: np.ndarray, cfg: EnvConfig, lam: np.ndarray
) -> float:
    """Stage-2 reward under the configured variant.

    dt_s: duration of instability up the horizon, clipped onto [-999, -500)
    delta_max: penalizes the end-of-horizon spread over 180 degrees,
        argument capped at 500 degrees
    tsi: rewards the (negative) stability index at the end of horizon
    """
    if cfg.reward_variant == "dt_s":
        return max(DYNAMIC_CEIL - float(lam @ dt_s), DYNAMIC_FLOOR)
    spread_deg = np.degrees(np.asarray(spread_end, dtype=float))
    if cfg.reward_variant == "delta_max":
        over = np.minimum(spread_deg - 180.0, 500.0)
        return max(DYNAMIC_CEIL - float(lam @ over), DYNAMIC_FLOOR)
    # tsi
    idx = (180.0 - spread_deg) / (180.0 + spread_deg)
    return max(DYNAMIC_CEIL + float(lam @ idx), DYNAMIC_FLOOR)


@dataclass
class _CaseCache:
    """Prebuilt matrices reused across environment calls."""

    ybus: np.ndarray
    fault_pairs: list[tuple[np.ndarray, np.ndarray]]
    max_cost: float
    lam: np.ndarray
    bounds: tuple[np.ndarray, np.ndarray]


def _make_cache(case: GridCase, cfg: EnvConfig) -> _CaseCache:
    return _CaseCache(
        ybus=build_ybus(case),
        fault_pairs=[fault_ybus_pair(case, c) for c in case.contingencies],
        max_cost=max_cost(case),
        lam=resolve_lambda_dyn(case, cfg),
        bounds=action_bounds(case),
    )


def _split_action(case: GridCase, action: np.ndarray) -> DispatchPoint:
    action = np.asarray(action, dtype=float)
    want = 2 * case.n_gen - 1
    if action.shape != (want,):
        raise EnvError(f"action must have length {want}, got {action.shape}")
    return DispatchPoint(v_c=action[: case.n_gen], p_c=action[case.n_gen:])


def _evaluate(
    case: GridCase,
    state: CustomState,
    action: np.ndarray,
    cfg: EnvConfig,
    cache: _CaseCache,
) -> tuple[RewardBreakdown, CustomState, PowerFlowSolution]:
    dispatch = _split_action(case, action)
    next_state = CustomState(
        v_c=dispatch.v_c, p_c=dispatch.p_c, p_d=state.p_d, q_d=state.q_d
    )
    sol = solve_nr(case, dispatch, loads=(state.p_d, state.q_d), ybus=cache.ybus)
    if not sol.converged:
        bd = RewardBreakdown(stage=STAGE_NON_CONVERGENT, value=NON_CONVERGENT_REWARD)
        return bd, next_state, sol

    n_cont = len(case.contingencies)
    dt_s = np.zeros(n_cont)
    spread_end = np.zeros(n_cont)
    any_unstable = False
    # the spread-at-horizon variants need the full trajectory, the
    # duration variant can stop at the first unstable step
    stop_early = cfg.reward_variant == "dt_s"
    for k, cont in enumerate(case.contingencies):
        out = simulate(
            case,
            sol,
            cont,
            cfg.dyn_cfg,
            ybus=cache.ybus,
            fault_pair=cache.fault_pairs[k],
            stop_on_instability=stop_early,
        )
        dt_s[k] = out.dt_s
        spread_end[k] = out.spread_end
        any_unstable |= not out.stable

    if any_unstable:
        value = dynamic_penalty(dt_s, spread_end, cfg, cache.lam)
        return RewardBreakdown(stage=STAGE_DYNAMIC, value=value, dt_s=dt_s), next_state, sol

    report = static_violations(case, sol)
    if report.any():
        value = max(-cfg.lambda_st * report.total(), STATIC_FLOOR)
        bd = RewardBreakdown(stage=STAGE_STATIC, value=value, dt_s=dt_s, static=report)
        return bd, next_state, sol

    cost = generation_cost(case, sol.p_g)
    value = cfg.lambda_opt * (1.0 - cost / cache.max_cost)
    bd = RewardBreakdown(
        stage=STAGE_FEASIBLE, value=value, dt_s=dt_s, static=report, cost=cost
    )
    return bd, next_state, sol


def step_reward(
    case: GridCase, state: CustomState, action: np.ndarray, cfg: EnvConfig
) -> tuple[RewardBreakdown, CustomState]:
    """Apply one dispatch action to a scenario and score it.

    Returns the reward breakdown and the next state (the action's
    dispatch with the scenario's loads). Callers are expected to pass
    actions already inside ``action_bounds``; out-of-range dispatches are
    simply scored like any other.
    """
    bd, nxt, _ = _evaluate(case, state, action, cfg, _make_cache(case, cfg))
    return bd, nxt


def _sample_state_solved(
    case: GridCase, cfg: EnvConfig, rng: np.random.Generator, cache: _CaseCache
) -> tuple[CustomState, PowerFlowSolution]:
    lo, hi = cache.bounds
    n_gen = case.n_gen
    p_base = np.array([l.p_base for l in case.loads])
    q_base = np.array([l.q_base for l in case.loads])
    f_lo, f_hi = cfg.load_range
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        draw = rng.uniform(lo, hi)
        p_d = p_base * rng.uniform(f_lo, f_hi, case.n_load)
        q_d = q_base * rng.uniform(f_lo, f_hi, case.n_load)
        dispatch = DispatchPoint(v_c=draw[:n_gen], p_c=draw[n_gen:])
        sol = solve_nr(case, dispatch, loads=(p_d, q_d), ybus=cache.ybus)
        if sol.converged:
            state = CustomState(v_c=dispatch.v_c, p_c=dispatch.p_c, p_d=p_d, q_d=q_d)
            return state, sol
    raise EnvError(
        f"no convergent scenario found in {MAX_SAMPLE_ATTEMPTS} draws"
    )


def sample_state(case: GridCase, cfg: EnvConfig, rng: np.random.Generator) -> CustomState:
    """Draw a random scenario whose incumbent power flow converges.

    Dispatch entries are uniform within their limits; each load's p and q
    get independent uniform factors from ``cfg.load_range``.
    """
    state, _ = _sample_state_solved(case, cfg, rng, _make_cache(case, cfg))
    return state


def observe(
    case: GridCase,
    state: CustomState,
    cfg: EnvConfig,
    sol: PowerFlowSolution | None = None,
) -> np.ndarray:
    """Observation vector for a scenario.

    loads_only: loads divided by their base values (length 2 * n_load).
    full_state: [V, P_G, Q_G, P_D, Q_D] from the solved incumbent power
    flow (length n_bus + 2 * n_gen + 2 * n_load).
    """
    if cfg.observation_variant == "loads_only":
        p_base = np.array([l.p_base for l in case.loads])
        q_base = np.array([l.q_base for l in case.loads])
        # a zero base would divide by zero; such loads pass through raw
        p_den = np.where(p_base != 0.0, p_base, 1.0)
        q_den = np.where(q_base != 0.0, q_base, 1.0)
        return np.concatenate([state.p_d / p_den, state.q_d / q_den])
    if sol is None:
        sol = solve_nr(
            case,
            DispatchPoint(v_c=state.v_c, p_c=state.p_c),
            loads=(state.p_d, state.q_d),
        )
    if not sol.converged:
        raise EnvError("full_state observation needs a convergent incumbent")
    return np.concatenate([sol.v, sol.p_g, sol.q_g, state.p_d, state.q_d])


def observation_size(case: GridCase, cfg: EnvConfig) -> int:
    if cfg.observation_variant == "loads_only":
        return 2 * case.n_load
    return case.n_bus + 2 * case.n_gen + 2 * case.n_load


def sample_insecure_scenario(
    case: GridCase, cfg: EnvConfig, rng: np.random.Generator
) -> CustomState:
    """Draw scenarios until one's incumbent dispatch is transiently
    insecure (some contingency unstable). Needs a non-empty contingency
    set."""
    if not case.contingencies:
        raise EnvError("sample_insecure_scenario needs at least one contingency")
    cache = _make_cache(case, cfg)
    attempts = 0
    while attempts < MAX_INSECURE_ATTEMPTS:
        state, sol = _sample_state_solved(case, cfg, rng, cache)
        attempts += 1
        for k, cont in enumerate(case.contingencies):
            out = simulate(
                case, sol, cont, cfg.dyn_cfg,
                ybus=cache.ybus, fault_pair=cache.fault_pairs[k],
            )
            if not out.stable:
                return state
    raise EnvError(
        f"no insecure scenario found in {MAX_INSECURE_ATTEMPTS} attempts"
    )


class DispatchEnv:
    """Stateful wrapper binding a case and a config, with cached
    matrices. Each instance is single-threaded; training workers own one
    instance each."""

    def __init__(self, case: GridCase, cfg: EnvConfig):
        self.case = case
        self.cfg = cfg
        self._cache = _make_cache(case, cfg)
        self._state: CustomState | None = None
        self._sol: PowerFlowSolution | None = None

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self._cache.bounds

    @property
    def action_size(self) -> int:
        return 2 * self.case.n_gen - 1

    @property
    def observation_size(self) -> int:
        return observation_size(self.case, self.cfg)

    @property
    def state(self) -> CustomState:
        if self._state is None:
            raise EnvError("environment not reset")
        return self._state

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state, self._sol = _sample_state_solved(self.case, self.cfg, rng, self._cache)
        return observe(self.case, self._state, self.cfg, sol=self._sol)

    def set_state(self, state: CustomState) -> np.ndarray:
        """Install a scenario directly (replay, evaluation)."""
        self._state = state
        self._sol = None
        return self.observe_current()

    def observe_current(self) -> np.ndarray:
        return observe(self.case, self.state, self.cfg, sol=self._sol)

    def evaluate(self, state: CustomState, action: np.ndarray) -> RewardBreakdown:
        """Score an action against a scenario without touching the live
        state."""
        bd, _, _ = _evaluate(self.case, state, action, self.cfg, self._cache)
        return bd

    def power_flow_converges(self, action: np.ndarray) -> bool:
        """Cheap check used by curriculum exploration: does this action's
        power flow converge under the live scenario's loads?"""
        dispatch = _split_action(self.case, action)
        sol = solve_nr(
            self.case, dispatch,
            loads=(self.state.p_d, self.state.q_d),
            ybus=self._cache.ybus,
        )
        return sol.converged

    def step(self, action: np.ndarray) -> tuple[RewardBreakdown, np.ndarray]:
        """Apply an action to the live scenario.

        A convergent action becomes the new incumbent; a non-convergent
        one leaves the incumbent in place (an unconverged dispatch cannot
        be observed). Returns the breakdown and the observation of the
        resulting live state.
        """
        bd, nxt, sol = _evaluate(self.case, self.state, action, self.cfg, self._cache)
        if bd.stage != STAGE_NON_CONVERGENT:
            self._state = nxt
            self._sol = sol
        return bd, self.observe_current()
