"""Planner stacks sharing one policy interface.

Every planner exposes start_episode(ctx, state), act(state) -> Action and
artifacts() -> dict; construction is cheap and one instance serves exactly
one episode at a time.
"""

from __future__ import annotations

from dataclasses import replace

from ..errors import ConfigError
from .astar_dwa import AStarConfig, AStarDWAPlanner, DWAConfig, astar_plan, dwa_step, path_cost
from .base import (DEFAULT_STUCK_PENALTY, PlannerContext, Trajectory,
                   evaluate_cost_J, trajectory_cost)
from .clrrt import CLRRTConfig, CLRRTPlanner, ClrrtPlan, clrrt_execute_step, clrrt_plan
from .mppi import MPPIConfig, MPPIPlanner, mppi_step, mppi_weights

PLANNER_NAMES = ("astar-dwa", "clrrt", "mppi")


def build_planner(name: str, *, astar: AStarConfig | None = None,
                  dwa: DWAConfig | None = None, clrrt: CLRRTConfig | None = None,
                  mppi: MPPIConfig | None = None, seed: int | None = None):
    """Instantiate a planner by CLI name, reseeding stochastic ones."""
    if name == "astar-dwa":
        return AStarDWAPlanner(astar, dwa)
    if name == "clrrt":
        cfg = clrrt or CLRRTConfig()
        return CLRRTPlanner(replace(cfg, seed=seed) if seed is not None else cfg)
    if name == "mppi":
        cfg = mppi or MPPIConfig()
        return MPPIPlanner(replace(cfg, seed=seed) if seed is not None else cfg)
    raise ConfigError(f"unknown planner {name!r}; expected one of {PLANNER_NAMES}")


__all__ = [
    "AStarConfig", "AStarDWAPlanner", "CLRRTConfig", "CLRRTPlanner", "ClrrtPlan",
    "DEFAULT_STUCK_PENALTY", "DWAConfig", "MPPIConfig", "MPPIPlanner",
    "PLANNER_NAMES", "PlannerContext", "Trajectory", "astar_plan",
    "build_planner", "clrrt_execute_step", "clrrt_plan", "dwa_step",
    "evaluate_cost_J", "mppi_step", "mppi_weights", "path_cost",
    "trajectory_cost",
]
