"""Search-based stack: A* global path on the free-cell grid, DWA locally."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from ..dynamics import Action, RobotState, wrap_angles
from ..errors import ConfigError, PlanningFailure
from .base import PlannerContext

_NEIGHBORS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class AStarConfig:
    connectivity: int = 8
    heuristic_speed: float = 1.0

    def __post_init__(self):
        if self.connectivity != 8:
            raise ConfigError("only 8-connected search is supported")
        if self.heuristic_speed <= 0.0:
            raise ConfigError("heuristic_speed must be positive")


@dataclass(frozen=True)
class DWAConfig:
    v_samples: int = 7
    w_samples: int = 15
    horizon_steps: int = 10
    heading_weight: float = 1.0
    velocity_weight: float = 0.3
    trav_weight: float = 2.0
    subgoal_spacing: float = 2.0

    def __post_init__(self):
        if min(self.v_samples, self.w_samples, self.horizon_steps) < 1:
            raise ConfigError("sample counts and horizon must be >= 1")
        if self.subgoal_spacing <= 0.0:
            raise ConfigError("subgoal_spacing must be positive")


def astar_plan(ctx: PlannerContext, start_cell: tuple[int, int],
               cfg: AStarConfig | None = None) -> list[tuple[float, float]]:
    """Time-optimal path over free cells with traversability-scaled speed.

    Edge cost is center distance divided by the mean endpoint lambda-hat
    times heuristic_speed; the heuristic divides Euclidean distance by the
    map-wide best lambda-hat, which keeps it admissible. Ties pop by smaller
    heuristic, then row-major cell order. Returns cell-center waypoints from
    start to goal inclusive.
    """
    cfg = cfg or AStarConfig()
    lam = ctx.lambda_hat
    free = ctx.free_mask
    h_cells, w_cells = free.shape
    goal_cell = ctx.cell_index(*ctx.goal)
    sx, sy = start_cell
    gx, gy = goal_cell
    if not (0 <= sx < w_cells and 0 <= sy < h_cells) or not free[sy, sx]:
        raise PlanningFailure(f"start cell {start_cell} is not free")
    if not (0 <= gx < w_cells and 0 <= gy < h_cells) or not free[gy, gx]:
        raise PlanningFailure(f"goal cell {goal_cell} is not free")
    if start_cell == goal_cell:
        return [ctx.cell_center(sx, sy)]

    res = ctx.resolution
    speed = cfg.heuristic_speed
    lam_best = float(lam.max())
    if lam_best <= 0.0:
        raise PlanningFailure("no positive traversability anywhere on the map")

    def heuristic(ix, iy):
        return math.hypot(ix - gx, iy - gy) * res / (lam_best * speed)

    g = np.full((h_cells, w_cells), np.inf)
    parent = np.full((h_cells, w_cells, 2), -1, dtype=np.int32)
    closed = np.zeros((h_cells, w_cells), dtype=bool)
    g[sy, sx] = 0.0
    h0 = heuristic(sx, sy)
    heap = [(h0, h0, sy * w_cells + sx, sx, sy)]
    while heap:
        _, _, _, ix, iy = heapq.heappop(heap)
        if closed[iy, ix]:
            continue
        closed[iy, ix] = True
        if (ix, iy) == goal_cell:
            break
        lam_u = lam[iy, ix]
        g_u = g[iy, ix]
        for dx, dy in _NEIGHBORS:
            nx, ny = ix + dx, iy + dy
            if not (0 <= nx < w_cells and 0 <= ny < h_cells):
                continue
            if closed[ny, nx] or not free[ny, nx]:
                continue
            cost = math.hypot(dx, dy) * res / (0.5 * (lam_u + lam[ny, nx]) * speed)
            cand = g_u + cost
            if cand < g[ny, nx]:
                g[ny, nx] = cand
                parent[ny, nx] = (ix, iy)
                h = heuristic(nx, ny)
                heapq.heappush(heap, (cand + h, h, ny * w_cells + nx, nx, ny))
    if not closed[gy, gx]:
        raise PlanningFailure("no free path from start to goal")

    cells = [goal_cell]
    while cells[-1] != start_cell:
        px, py = parent[cells[-1][1], cells[-1][0]]
        cells.append((int(px), int(py)))
    cells.reverse()
    return [ctx.cell_center(ix, iy) for ix, iy in cells]


def path_cost(ctx: PlannerContext, waypoints, heuristic_speed: float = 1.0) -> float:
    """Accumulated edge cost of a cell-center waypoint path, summed in path
    order (matches the A* cost accounting bit for bit)."""
    lam = ctx.lambda_hat
    total = 0.0
    prev = None
    for x, y in waypoints:
        cell = ctx.cell_index(x, y)
        if prev is not None:
            (px, py), (cx, cy) = prev, cell
            dist = math.hypot(cx - px, cy - py) * ctx.resolution
            total = total + dist / (0.5 * (lam[py, px] + lam[cy, cx]) * heuristic_speed)
        prev = cell
    return total


def dwa_step(ctx: PlannerContext, s: RobotState, waypoints,
             cfg: DWAConfig | None = None) -> Action:
    """Pick the admissible sampled velocity pair with the best short rollout.

    The subgoal is the first waypoint farther than subgoal_spacing from the
    robot (else the last). Rollouts that enter a stuck or out-of-map cell
    are discarded; if nothing is admissible the robot rotates in place.
    Score ties resolve to the lowest sample index.
    """
    cfg = cfg or DWAConfig()
    if not waypoints:
        raise ConfigError("dwa_step requires at least one waypoint")
    subgoal = waypoints[-1]
    for wp in waypoints:
        if math.hypot(wp[0] - s.x, wp[1] - s.y) > cfg.subgoal_spacing:
            subgoal = wp
            break

    sim = ctx.sim
    vs = np.linspace(0.0, sim.v_max, cfg.v_samples)
    ws = np.linspace(-sim.omega_max, sim.omega_max, cfg.w_samples)
    V, W = np.meshgrid(vs, ws, indexing="ij")
    V, W = V.ravel(), W.ravel()

    n = V.size
    x = np.full(n, s.x)
    y = np.full(n, s.y)
    th = np.full(n, s.theta)
    ok = np.ones(n, dtype=bool)
    lam_sum = np.zeros(n)
    for _ in range(cfg.horizon_steps):
        lam = ctx.lambda_hat_at(x, y, fill=0.0)
        scale = sim.dt * lam
        x = x + scale * V * np.cos(th)
        y = y + scale * V * np.sin(th)
        th = wrap_angles(th + scale * W)
        ok &= ctx.free_at(x, y)
        lam_sum += ctx.lambda_hat_at(x, y, fill=0.0)

    if not ok.any():
        return Action(0.0, sim.omega_max)

    final_dist = np.hypot(x - subgoal[0], y - subgoal[1])
    mean_lam = lam_sum / cfg.horizon_steps
    score = (cfg.heading_weight * final_dist
             - cfg.trav_weight * mean_lam
             - cfg.velocity_weight * V)
    score[~ok] = np.inf
    k = int(np.argmin(score))
    return Action(float(V[k]), float(W[k]))


class AStarDWAPlanner:
    """Hierarchical planner: one global A* path, DWA action selection.

    The global path is planned once per episode; execution keeps a monotone
    progress index along it so already-passed waypoints are never re-chosen
    as subgoals.
    """

    name = "astar-dwa"

    def __init__(self, astar_cfg: AStarConfig | None = None,
                 dwa_cfg: DWAConfig | None = None):
        self.astar_cfg = astar_cfg or AStarConfig()
        self.dwa_cfg = dwa_cfg or DWAConfig()
        self._ctx = None
        self._waypoints = []
        self._progress = 0

    def start_episode(self, ctx: PlannerContext, state: RobotState) -> None:
        self._ctx = ctx
        self._waypoints = astar_plan(ctx, ctx.cell_index(state.x, state.y),
                                     self.astar_cfg)
        self._progress = 0

    def act(self, state: RobotState) -> Action:
        spacing = self.dwa_cfg.subgoal_spacing
        while (self._progress < len(self._waypoints) - 1
               and math.hypot(self._waypoints[self._progress][0] - state.x,
                              self._waypoints[self._progress][1] - state.y) <= spacing):
            self._progress += 1
        return dwa_step(self._ctx, state, self._waypoints[self._progress:],
                        self.dwa_cfg)

    def artifacts(self) -> dict:
        return {"reference_path": list(self._waypoints)}
