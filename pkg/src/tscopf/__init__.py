"""Transient-security-constrained dispatch toolkit.

Subpackages cover the static grid model, AC power flow, classical
swing-equation simulation, the dispatch RL environment, a self-contained
MLP, the DDPG trainer, a particle-swarm baseline, and the command line.
"""

from tscopf.grid import (
    Branch,
    Bus,
    CaseError,
    ContingencySpec,
    Generator,
    GridCase,
    Load,
    build_ybus,
    fault_ybus_pair,
    load_case,
)
from tscopf.powerflow import (
    DispatchPoint,
    PowerFlowSolution,
    StaticViolationReport,
    generation_cost,
    solve_nr,
    static_violations,
)
from tscopf.dynamics import (
    DynamicConfig,
    SimulationOutcome,
    angle_spread,
    instability_duration,
    kron_reduce,
    simulate,
    transient_stability_index,
)
from tscopf.env import (
    CustomState,
    DispatchEnv,
    EnvConfig,
    RewardBreakdown,
    action_bounds,
    max_cost,
    observe,
    sample_insecure_scenario,
    sample_state,
    stage_of_value,
    step_reward,
)

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Bus",
    "CaseError",
    "ContingencySpec",
    "CustomState",
    "DispatchEnv",
    "DispatchPoint",
    "DynamicConfig",
    "EnvConfig",
    "Generator",
    "GridCase",
    "Load",
    "PowerFlowSolution",
    "RewardBreakdown",
    "SimulationOutcome",
    "StaticViolationReport",
    "action_bounds",
    "angle_spread",
    "build_ybus",
    "fault_ybus_pair",
    "generation_cost",
    "instability_duration",
    "kron_reduce",
    "load_case",
    "max_cost",
    "observe",
    "sample_insecure_scenario",
    "sample_state",
    "simulate",
    "solve_nr",
    "stage_of_value",
    "static_violations",
    "step_reward",
    "transient_stability_index",
]
