"""Shared planner-side view of the world: risk field, free space, cost."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dynamics import Action, RobotState, SimConfig, sample_raster
from ..errors import ConfigError

# Cost of touching a predicted-stuck or out-of-map state; large but finite
# so sampling-based optimizers keep usable gradients.
DEFAULT_STUCK_PENALTY = 1e3


@dataclass(frozen=True)
class Trajectory:
    """Executed or planned motion: one more state than actions, one observed
    traversability per action."""

    states: tuple[RobotState, ...]
    actions: tuple[Action, ...]
    observed_lambda: tuple[float, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ConfigError("trajectory needs exactly one more state than actions")
        if len(self.observed_lambda) != len(self.actions):
            raise ConfigError("trajectory needs one observed lambda per action")


@dataclass(frozen=True)
class PlannerContext:
    """Immutable per-episode planning inputs.

    lambda_hat holds the risk-evaluated traversability estimate at cell
    centers; free_mask marks cells strictly above the stuck threshold.
    """

    lambda_hat: np.ndarray
    resolution: float
    free_mask: np.ndarray
    goal: tuple[float, float]
    goal_radius: float
    lambda_stuck: float
    sim: SimConfig
    stuck_penalty: float = DEFAULT_STUCK_PENALTY

    def __post_init__(self):
        lam = np.ascontiguousarray(self.lambda_hat, dtype=float)
        free = np.ascontiguousarray(self.free_mask, dtype=bool)
        if lam.shape != free.shape or lam.ndim != 2:
            raise ConfigError("lambda_hat and free_mask must be matching 2D rasters")
        if not np.array_equal(free, lam > self.lambda_stuck):
            raise ConfigError("free_mask is inconsistent with lambda_hat and lambda_stuck")
        lam.setflags(write=False)
        free.setflags(write=False)
        object.__setattr__(self, "lambda_hat", lam)
        object.__setattr__(self, "free_mask", free)

    @property
    def height(self) -> int:
        return self.lambda_hat.shape[0]

    @property
    def width(self) -> int:
        return self.lambda_hat.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    def in_bounds(self, xs, ys):
        ex, ey = self.extent
        return (np.asarray(xs) >= 0.0) & (np.asarray(xs) < ex) \
            & (np.asarray(ys) >= 0.0) & (np.asarray(ys) < ey)

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        return int(x / self.resolution), int(y / self.resolution)

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution

    def trav_lookup(self, x, y):
        """Risk-evaluated traversability at world coordinates (bilinear)."""
        return sample_raster(self.lambda_hat, self.resolution, x, y,
                             mode="bilinear", oob="raise")

    def lambda_hat_at(self, xs, ys, fill: float = 0.0):
        """Bilinear lambda-hat with a constant fill outside the map."""
        return sample_raster(self.lambda_hat, self.resolution, xs, ys,
                             mode="bilinear", oob="fill", fill=fill)

    def free_at(self, xs, ys):
        """Whether the containing cell is free; out of bounds is not free."""
        x = np.atleast_1d(np.asarray(xs, dtype=float))
        y = np.atleast_1d(np.asarray(ys, dtype=float))
        inb = self.in_bounds(x, y)
        ix = np.clip((x / self.resolution).astype(np.int64), 0, self.width - 1)
        iy = np.clip((y / self.resolution).astype(np.int64), 0, self.height - 1)
        out = self.free_mask[iy, ix] & inb
        return bool(out[0]) if np.asarray(xs).ndim == 0 else out

    def distance_to_goal(self, xs, ys):
        gx, gy = self.goal
        return np.hypot(np.asarray(xs) - gx, np.asarray(ys) - gy)


def evaluate_cost_J(xs, ys, ctx: PlannerContext, terminal_weight: float,
                    stuck_penalty: float | None = None):
    """Trajectory cost: summed goal distance with stuck penalties plus a
    terminally weighted goal distance.

    xs and ys carry the trajectory states on the last axis; leading axes
    batch independent candidates. States outside the map count as stuck.
    The result is finite for all finite inputs.
    """
    penalty = ctx.stuck_penalty if stuck_penalty is None else stuck_penalty
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    d = ctx.distance_to_goal(x, y)
    lam = ctx.lambda_hat_at(x, y, fill=-1.0)
    stuck = lam <= ctx.lambda_stuck
    cost = (d + penalty * stuck).sum(axis=-1) + terminal_weight * d[..., -1]
    return float(cost) if cost.ndim == 0 else cost


def trajectory_cost(traj_xy, ctx: PlannerContext, terminal_weight: float,
                    stuck_penalty: float | None = None) -> float:
    """evaluate_cost_J over a single candidate given as an (n, 2) array or
    a sequence of (x, y) pairs."""
    pts = np.asarray(traj_xy, dtype=float)
    return float(evaluate_cost_J(pts[:, 0], pts[:, 1], ctx, terminal_weight,
                                 stuck_penalty))
