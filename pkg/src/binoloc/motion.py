"""Differential-drive kinematics and sampling motion models.

Both samplers follow the sample-based velocity and odometry models of
Thrun, Burgard and Fox, *Probabilistic Robotics* (2005), with zero-mean
Gaussian noise whose variance is ``alpha_a * a**2 + alpha_b * b**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import wrap_angle

# below this |omega| the arc update switches to its straight-line series form
OMEGA_EPS = 1e-6
# odometry increments shorter than this carry no usable direction
TRANS_EPS = 1e-9


class Pose(NamedTuple):
    x: float
    y: float
    phi: float


class VelocityCommand(NamedTuple):
    v: float
    omega: float


@dataclass(frozen=True)
class LeverArm:
    dx: float = 0.3
    dy: float = 0.0

    def __post_init__(self):
        if self.dx == 0.0 and self.dy == 0.0:
            raise ValueError("lever arm must be non-zero")


@dataclass(frozen=True)
class MotionNoiseParams:
    vel: tuple[float, float, float, float, float, float]
    odom: tuple[float, float, float, float]

    def __post_init__(self):
        if len(self.vel) != 6 or len(self.odom) != 4:
            raise ValueError("need 6 velocity and 4 odometry alphas")
        if any(a < 0 for a in (*self.vel, *self.odom)):
            raise ValueError("motion noise alphas must be >= 0")

    @classmethod
    def zero(cls) -> "MotionNoiseParams":
        return cls((0.0,) * 6, (0.0,) * 4)


# calibrated on a Viking MI 422P lawn mower
VIKING_MI_422P = MotionNoiseParams(
    vel=(0.0346, 0.0316, 0.0755, 0.0566, 0.0592, 0.0678),
    odom=(0.0849, 0.0412, 0.0316, 0.0173),
)
PRESETS = {"viking-mi-422p": VIKING_MI_422P, "noise-free": MotionNoiseParams.zero()}


def sensor_position(pose, arm: LeverArm) -> tuple[float, float]:
    x, y, phi = pose
    c, s = math.cos(phi), math.sin(phi)
    return (x + c * arm.dx - s * arm.dy, y + s * arm.dx + c * arm.dy)


def sensor_positions(poses: np.ndarray, arm: LeverArm) -> np.ndarray:
    """Sensor positions for an ``(k, 3)`` array of poses."""
    c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    return np.column_stack(
        (poses[:, 0] + c * arm.dx - s * arm.dy, poses[:, 1] + s * arm.dx + c * arm.dy)
    )


def _arc(x, y, phi, v, w, dt):
    if abs(w) < OMEGA_EPS:
        # second-order expansion of the arc around w = 0
        h = phi + 0.5 * w * dt
        return x + v * dt * math.cos(h), y + v * dt * math.sin(h)
    r = v / w
    return (
        x - r * math.sin(phi) + r * math.sin(phi + w * dt),
        y + r * math.cos(phi) - r * math.cos(phi + w * dt),
    )


def sample_velocity_motion(pose, cmd, dt: float, params: MotionNoiseParams, rng) -> Pose:
    if dt <= 0:
        raise ValueError("dt must be positive")
    a1, a2, a3, a4, a5, a6 = params.vel
    v, w = cmd
    z = rng.standard_normal(3)
    v_hat = v + z[0] * math.sqrt(a1 * v * v + a2 * w * w)
    w_hat = w + z[1] * math.sqrt(a3 * v * v + a4 * w * w)
    g_hat = z[2] * math.sqrt(a5 * v * v + a6 * w * w)
    x, y = _arc(pose[0], pose[1], pose[2], v_hat, w_hat, dt)
    return Pose(x, y, pose[2] + w_hat * dt + g_hat * dt)


def odometry_increment(odom_prev, odom_curr) -> tuple[float, float, float]:
    """Decompose an odometry step into (rot1, trans, rot2).

    Backward steps are expressed as a negative translation so that rot1 and
    rot2 stay small instead of flipping by pi.
    """
    dx = odom_curr[0] - odom_prev[0]
    dy = odom_curr[1] - odom_prev[1]
    trans = math.hypot(dx, dy)
    if trans < TRANS_EPS:
        rot1 = 0.0
    else:
        rot1 = wrap_angle(math.atan2(dy, dx) - odom_prev[2])
        if abs(rot1) > math.pi / 2:
            rot1 = wrap_angle(rot1 - math.pi)
            trans = -trans
    rot2 = wrap_angle(odom_curr[2] - odom_prev[2] - rot1)
    return rot1, trans, rot2


def apply_odometry(poses: np.ndarray, increment, params: MotionNoiseParams, rng) -> np.ndarray:
    """Propagate an ``(k, 3)`` pose array through the odometry model."""
    a1, a2, a3, a4 = params.odom
    rot1, trans, rot2 = increment
    k = poses.shape[0]
    t2 = trans * trans
    sd_r1 = math.sqrt(a1 * rot1 * rot1 + a2 * t2)
    sd_t = math.sqrt(a3 * t2 + a4 * (rot1 * rot1 + rot2 * rot2))
    sd_r2 = math.sqrt(a1 * rot2 * rot2 + a2 * t2)
    if sd_r1 == sd_t == sd_r2 == 0.0:
        r1 = np.full(k, rot1)
        tr = np.full(k, trans)
        r2 = np.full(k, rot2)
    else:
        z = rng.standard_normal((3, k))
        r1 = rot1 - sd_r1 * z[0]
        tr = trans - sd_t * z[1]
        r2 = rot2 - sd_r2 * z[2]
    h = poses[:, 2] + r1
    out = np.empty_like(poses)
    out[:, 0] = poses[:, 0] + tr * np.cos(h)
    out[:, 1] = poses[:, 1] + tr * np.sin(h)
    out[:, 2] = h + r2
    return out


def sample_odometry_motion(pose, odom_prev, odom_curr, params: MotionNoiseParams, rng) -> Pose:
    inc = odometry_increment(odom_prev, odom_curr)
    out = apply_odometry(np.asarray([pose], dtype=float), inc, params, rng)[0]
    return Pose(float(out[0]), float(out[1]), float(out[2]))
