"""Traversability-scaled unicycle kinematics and grid raster lookups."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ConfigError, NumericError


def wrap_angle(theta: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    return math.pi - (math.pi - theta) % math.tau


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle."""
    return np.pi - (np.pi - np.asarray(theta)) % (2.0 * np.pi)


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float
    t: float = 0.0


@dataclass(frozen=True)
class Action:
    v: float
    omega: float


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    v_max: float = 1.0
    omega_max: float = 1.0
    interpolation: str = "nearest"

    def __post_init__(self):
        if self.dt <= 0.0 or self.v_max <= 0.0 or self.omega_max <= 0.0:
            raise ConfigError("dt, v_max and omega_max must be positive")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ConfigError(f"unknown interpolation mode {self.interpolation!r}")


def clamp_action(a: Action, cfg: SimConfig) -> Action:
    return Action(
        v=min(max(a.v, -cfg.v_max), cfg.v_max),
        omega=min(max(a.omega, -cfg.omega_max), cfg.omega_max),
    )


def step(s: RobotState, a: Action, lam: float, cfg: SimConfig) -> RobotState:
    """One explicit-Euler update: the scalar traversability coefficient
    scales both the linear and angular commanded velocities."""
    if not all(map(math.isfinite, (s.x, s.y, s.theta, a.v, a.omega, lam))):
        raise NumericError("non-finite state, action or traversability input")
    scale = cfg.dt * lam
    return RobotState(
        x=s.x + scale * a.v * math.cos(s.theta),
        y=s.y + scale * a.v * math.sin(s.theta),
        theta=wrap_angle(s.theta + scale * a.omega),
        t=s.t + cfg.dt,
    )


def is_stuck(lam: float, lambda_stuck: float) -> bool:
    """A traversability at or below the threshold immobilizes the robot."""
    return lam <= lambda_stuck


def sample_raster(raster: np.ndarray, resolution: float, xs, ys, *,
                  mode: str = "nearest", oob: str = "raise", fill: float = 0.0):
    """Sample a per-cell raster at world coordinates.

    nearest returns the containing cell's value; bilinear interpolates the
    four surrounding cell centers, clamping to the border band at edges.
    Out-of-bounds handling: "raise" (BoundsError) or "fill" (constant).
    Accepts scalars or arrays; returns matching shape.
    """
    r = np.asarray(raster, dtype=float)
    h, w = r.shape
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    scalar = x.ndim == 0 and y.ndim == 0
    x, y = np.atleast_1d(x), np.atleast_1d(y)
    inb = (x >= 0.0) & (x < w * resolution) & (y >= 0.0) & (y < h * resolution)
    if oob == "raise":
        if not np.all(inb):
            bad = np.argwhere(~inb)[0]
            raise BoundsError(
                f"query ({float(x.ravel()[bad] if x.size > 1 else x[0])}, "
                f"{float(y.ravel()[bad] if y.size > 1 else y[0])}) outside map extent"
            )
    elif oob != "fill":
        raise ConfigError(f"unknown oob policy {oob!r}")

    if mode == "nearest":
        ix = np.clip((x / resolution).astype(np.int64), 0, w - 1)
        iy = np.clip((y / resolution).astype(np.int64), 0, h - 1)
        out = r[iy, ix]
    elif mode == "bilinear":
        u = np.clip(x / resolution - 0.5, 0.0, w - 1.0)
        v = np.clip(y / resolution - 0.5, 0.0, h - 1.0)
        i0 = np.clip(u.astype(np.int64), 0, max(w - 2, 0))
        j0 = np.clip(v.astype(np.int64), 0, max(h - 2, 0))
        i1 = np.minimum(i0 + 1, w - 1)
        j1 = np.minimum(j0 + 1, h - 1)
        tu = u - i0
        tv = v - j0
        out = ((1.0 - tv) * ((1.0 - tu) * r[j0, i0] + tu * r[j0, i1])
               + tv * ((1.0 - tu) * r[j1, i0] + tu * r[j1, i1]))
    else:
        raise ConfigError(f"unknown interpolation mode {mode!r}")

    if oob == "fill":
        out = np.where(inb, out, fill)
    return float(out[0]) if scalar else out


def lookup_lambda(raster: np.ndarray, resolution: float, x: float, y: float,
                  mode: str = "nearest") -> float:
    """Scalar traversability lookup; raises BoundsError outside the map."""
    return sample_raster(raster, resolution, x, y, mode=mode, oob="raise")
