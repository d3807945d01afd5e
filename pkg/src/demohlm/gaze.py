"""Proportional 2-DoF neck controller that keeps the target near the image centre.

The camera frame has x pointing up in the image, y pointing right and z along
the optical axis; the neck yaw joint turns left for positive angles and the
pitch joint looks down for positive angles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GazeGains:
    k_yaw: float = 2.0
    k_pitch: float = 2.0
    omega_max: float = 1.5
    neck_limits: tuple = ((-1.0, 1.0), (-0.6, 0.6))
    dead_band: float = 1e-3

    def __post_init__(self) -> None:
        if self.k_yaw <= 0 or self.k_pitch <= 0:
            raise ValueError("gaze gains must be strictly positive")
        if self.omega_max <= 0:
            raise ValueError("omega_max must be strictly positive")
        for lo, hi in self.neck_limits:
            if not lo < hi:
                raise ValueError(f"neck limits must be well ordered, got {(lo, hi)}")
        if self.dead_band < 0:
            raise ValueError("dead_band must be non-negative")


def _clip(u: float, a: float, b: float) -> float:
    return min(max(u, a), b)


def gaze_command(p_cam, gains: GazeGains) -> tuple[float, float]:
    """Neck angular velocities ``(omega_yaw, omega_pitch)`` for a target at ``p_cam``."""
    x_c, y_c, _ = (float(v) for v in p_cam)
    if not (np.isfinite(x_c) and np.isfinite(y_c)):
        raise ValueError(f"non-finite target position {p_cam!r}")
    w = gains.omega_max
    omega_yaw = 0.0 if abs(y_c) < gains.dead_band else _clip(-gains.k_yaw * y_c, -w, w)
    omega_pitch = 0.0 if abs(x_c) < gains.dead_band else _clip(-gains.k_pitch * x_c, -w, w)
    return omega_yaw, omega_pitch


def integrate_neck(theta, omega, dt: float, limits) -> tuple[float, float]:
    """One explicit Euler step of the neck joints, clamped to ``limits``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = []
    for th, om, (lo, hi) in zip(theta, omega, limits):
        out.append(_clip(float(th) + float(om) * dt, float(lo), float(hi)))
    return out[0], out[1]
