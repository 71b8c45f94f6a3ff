"""Optimization-based stack: model predictive path integral control."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import Action, RobotState, wrap_angles
from ..errors import ConfigError, NumericError
from .base import PlannerContext, evaluate_cost_J


@dataclass(frozen=True)
class MPPIConfig:
    num_samples: int = 512
    horizon: int = 30
    temperature: float = 0.1
    noise_sigma: tuple[float, float] = (0.3, 0.5)
    terminal_weight: float = 10.0
    seed: int = 0
    top_k_render: int = 16

    def __post_init__(self):
        if self.num_samples < 1 or self.horizon < 1:
            raise ConfigError("num_samples and horizon must be >= 1")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if any(s < 0.0 for s in self.noise_sigma):
            raise ConfigError("noise_sigma entries must be nonnegative")


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Softmin weights over sample costs, shifted by the minimum so the
    result is invariant to adding a constant to every cost."""
    s = np.asarray(costs, dtype=float)
    w = np.exp(-(s - s.min()) / temperature)
    return w / w.sum()


def _rollout(ctx: PlannerContext, s: RobotState, controls: np.ndarray):
    """Propagate K action sequences through the unicycle under lambda-hat.

    controls is (K, H, 2); returns x, y arrays of shape (K, H + 1) starting
    at the current state. Out-of-map states freeze (lambda 0 there).
    """
    sim = ctx.sim
    k, h, _ = controls.shape
    x = np.empty((k, h + 1))
    y = np.empty((k, h + 1))
    th = np.full(k, s.theta)
    x[:, 0] = s.x
    y[:, 0] = s.y
    for i in range(h):
        lam = ctx.lambda_hat_at(x[:, i], y[:, i], fill=0.0)
        scale = sim.dt * lam
        x[:, i + 1] = x[:, i] + scale * controls[:, i, 0] * np.cos(th)
        y[:, i + 1] = y[:, i] + scale * controls[:, i, 0] * np.sin(th)
        th = wrap_angles(th + scale * controls[:, i, 1])
    return x, y


def mppi_step(ctx: PlannerContext, s: RobotState, cfg: MPPIConfig,
              warm_start: np.ndarray, rng: np.random.Generator):
    """One MPPI update of the nominal action sequence.

    Draws K Gaussian perturbation sequences, rolls out the limit-clamped
    candidates, weights them by softmin cost and folds the weighted noise
    back into the nominal sequence. Returns (first action, shifted warm
    start, info) where the shift duplicates the final entry.
    """
    u = np.asarray(warm_start, dtype=float)
    if u.shape != (cfg.horizon, 2):
        raise ConfigError(f"warm start must have shape ({cfg.horizon}, 2)")
    sim = ctx.sim
    eps = rng.normal(0.0, 1.0, size=(cfg.num_samples, cfg.horizon, 2))
    eps *= np.asarray(cfg.noise_sigma)
    cand = u[None] + eps
    cand[..., 0] = np.clip(cand[..., 0], -sim.v_max, sim.v_max)
    cand[..., 1] = np.clip(cand[..., 1], -sim.omega_max, sim.omega_max)

    x, y = _rollout(ctx, s, cand)
    costs = evaluate_cost_J(x, y, ctx, cfg.terminal_weight)
    if not np.isfinite(costs).any():
        raise NumericError("all MPPI sample costs are non-finite")

    w = mppi_weights(costs, cfg.temperature)
    u_new = u + np.einsum("k,khj->hj", w, eps)
    first = Action(
        v=float(np.clip(u_new[0, 0], -sim.v_max, sim.v_max)),
        omega=float(np.clip(u_new[0, 1], -sim.omega_max, sim.omega_max)),
    )
    next_warm = np.concatenate([u_new[1:], u_new[-1:]], axis=0)
    info = {"costs": costs, "rollout_x": x, "rollout_y": y}
    return first, next_warm, info


class MPPIPlanner:
    """Episode adapter holding the warm-started nominal sequence."""

    name = "mppi"

    def __init__(self, cfg: MPPIConfig | None = None):
        self.cfg = cfg or MPPIConfig()
        self._ctx = None
        self._rng = None
        self._warm = None
        self._last_info = None

    def start_episode(self, ctx: PlannerContext, state: RobotState) -> None:
        self._ctx = ctx
        self._rng = np.random.default_rng(self.cfg.seed)
        self._warm = np.zeros((self.cfg.horizon, 2))
        self._last_info = None

    def act(self, state: RobotState) -> Action:
        action, self._warm, self._last_info = mppi_step(
            self._ctx, state, self.cfg, self._warm, self._rng)
        return action

    def artifacts(self) -> dict:
        if self._last_info is None:
            return {"top_rollouts": []}
        costs = self._last_info["costs"]
        order = np.argsort(costs, kind="stable")[: self.cfg.top_k_render]
        x = self._last_info["rollout_x"][order]
        y = self._last_info["rollout_y"][order]
        rollouts = [list(zip(x[i].tolist(), y[i].tolist())) for i in range(len(order))]
        return {"top_rollouts": rollouts}
