"""Sampling-based stack: closed-loop RRT with pure-pursuit tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dynamics import Action, RobotState, step, wrap_angle
from ..errors import ConfigError, PlanningFailure
from .base import PlannerContext


@dataclass(frozen=True)
class CLRRTConfig:
    max_iterations: int = 300
    goal_bias: float = 0.15
    lookahead: float = 1.5
    speed_gain: float = 1.0
    deviation_threshold: float = 1.0
    extension_steps: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.extension_steps < 1:
            raise ConfigError("iteration and extension budgets must be >= 1")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ConfigError("goal_bias must lie in [0, 1]")
        if self.lookahead <= 0.0 or self.speed_gain <= 0.0:
            raise ConfigError("lookahead and speed_gain must be positive")
        if self.deviation_threshold <= 0.0:
            raise ConfigError("deviation_threshold must be positive")


@dataclass(frozen=True)
class ClrrtPlan:
    """Root-to-goal branch: expected states plus the actions between them."""

    states: tuple[RobotState, ...]
    actions: tuple[Action, ...]


def _track_reference(ctx: PlannerContext, start: RobotState, ref, cfg: CLRRTConfig):
    """Simulate pure-pursuit steering with proportional speed toward ref.

    Truncates at stuck or out-of-bounds cells and stops once within the goal
    radius of the reference. Returns the simulated (states, actions), which
    may be empty when the very first step is infeasible.
    """
    sim = ctx.sim
    states: list[RobotState] = []
    actions: list[Action] = []
    cur = start
    for _ in range(cfg.extension_steps):
        dx, dy = ref[0] - cur.x, ref[1] - cur.y
        remaining = math.hypot(dx, dy)
        if remaining < ctx.goal_radius:
            break
        v = min(max(cfg.speed_gain * remaining, 0.0), sim.v_max)
        eta = wrap_angle(math.atan2(dy, dx) - cur.theta)
        omega = 2.0 * v * math.sin(eta) / cfg.lookahead
        omega = min(max(omega, -sim.omega_max), sim.omega_max)
        action = Action(v, omega)
        lam = ctx.lambda_hat_at(cur.x, cur.y, fill=0.0)
        nxt = step(cur, action, float(lam), sim)
        if not ctx.free_at(nxt.x, nxt.y):
            break
        states.append(nxt)
        actions.append(action)
        cur = nxt
    return states, actions


def clrrt_plan(ctx: PlannerContext, start: RobotState, cfg: CLRRTConfig,
               rng: np.random.Generator):
    """Grow a closed-loop tree from start until a node enters the goal region.

    Each iteration samples a reference (the goal with probability goal_bias,
    otherwise a uniformly drawn free cell center), picks the nearest node by
    Euclidean position and simulates the tracking controller toward it.
    Returns (plan, tree_edges); raises PlanningFailure after max_iterations.
    """
    if not ctx.free_at(start.x, start.y):
        raise PlanningFailure("start state is not in free space")

    free_cells = np.argwhere(ctx.free_mask)  # rows of (iy, ix)
    if free_cells.size == 0:
        raise PlanningFailure("no free cells to sample")

    nodes = [start]
    parents = [-1]
    segments: list[tuple[list[RobotState], list[Action]]] = [([], [])]
    positions = [(start.x, start.y)]
    edges: list[list[tuple[float, float]]] = []

    def goal_reached(s: RobotState) -> bool:
        return math.hypot(s.x - ctx.goal[0], s.y - ctx.goal[1]) <= ctx.goal_radius

    if goal_reached(start):
        return ClrrtPlan((start,), ()), edges

    for _ in range(cfg.max_iterations):
        if rng.random() < cfg.goal_bias:
            ref = ctx.goal
        else:
            iy, ix = free_cells[rng.integers(len(free_cells))]
            ref = ctx.cell_center(int(ix), int(iy))
        pos = np.asarray(positions)
        nearest = int(np.argmin((pos[:, 0] - ref[0]) ** 2 + (pos[:, 1] - ref[1]) ** 2))
        seg_states, seg_actions = _track_reference(ctx, nodes[nearest], ref, cfg)
        if not seg_states:
            continue
        nodes.append(seg_states[-1])
        parents.append(nearest)
        segments.append((seg_states, seg_actions))
        positions.append((seg_states[-1].x, seg_states[-1].y))
        edges.append([(nodes[nearest].x, nodes[nearest].y)]
                     + [(s.x, s.y) for s in seg_states])
        if goal_reached(seg_states[-1]):
            states: list[RobotState] = []
            actions: list[Action] = []
            idx = len(nodes) - 1
            chain = []
            while idx >= 0:
                chain.append(idx)
                idx = parents[idx]
            for node_idx in reversed(chain):
                seg_s, seg_a = segments[node_idx]
                states.extend(seg_s)
                actions.extend(seg_a)
            return ClrrtPlan((start, *states), tuple(actions)), edges
    raise PlanningFailure(f"goal not reached within {cfg.max_iterations} tree iterations")


def clrrt_execute_step(ctx: PlannerContext, s: RobotState, plan: ClrrtPlan,
                       index: int, cfg: CLRRTConfig, rng: np.random.Generator):
    """Emit the planned action at index, replanning on large deviation.

    Deviation strictly greater than the threshold between the actual state
    and the plan's expected state discards the plan and replans from s; a
    plan that has run out of actions replans as well. Returns
    (action, replanned, plan, next_index, tree_edges_or_None).
    """
    replanned = False
    edges = None
    if index >= len(plan.actions):
        plan, edges = clrrt_plan(ctx, s, cfg, rng)
        index = 0
        replanned = True
    else:
        expected = plan.states[index]
        if math.hypot(s.x - expected.x, s.y - expected.y) > cfg.deviation_threshold:
            plan, edges = clrrt_plan(ctx, s, cfg, rng)
            index = 0
            replanned = True
    if not plan.actions:
        # Planned from inside the goal region; stop and let the episode end.
        return Action(0.0, 0.0), replanned, plan, index, edges
    return plan.actions[index], replanned, plan, index + 1, edges


class CLRRTPlanner:
    """Episode adapter: plans once, tracks the branch, replans on deviation."""

    name = "clrrt"

    def __init__(self, cfg: CLRRTConfig | None = None):
        self.cfg = cfg or CLRRTConfig()
        self._ctx = None
        self._rng = None
        self._plan = None
        self._index = 0
        self._edges: list[list[tuple[float, float]]] = []
        self.replan_count = 0

    def start_episode(self, ctx: PlannerContext, state: RobotState) -> None:
        self._ctx = ctx
        self._rng = np.random.default_rng(self.cfg.seed)
        self._plan, self._edges = clrrt_plan(ctx, state, self.cfg, self._rng)
        self._index = 0
        self.replan_count = 0

    def act(self, state: RobotState) -> Action:
        action, replanned, self._plan, self._index, edges = clrrt_execute_step(
            self._ctx, state, self._plan, self._index, self.cfg, self._rng)
        if replanned:
            self.replan_count += 1
            if edges is not None:
                self._edges = edges
        return action

    def artifacts(self) -> dict:
        plan_xy = [(s.x, s.y) for s in self._plan.states] if self._plan else []
        return {"tree_edges": [list(e) for e in self._edges], "plan": plan_xy}
