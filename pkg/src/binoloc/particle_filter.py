"""Particle filter for the systematic search along the boundary.

Particles are seeded around the land-navigation estimate, propagated with
odometry increments and weighted with the binary agree/disagree likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PolygonMap, wrap_angle
from .motion import LeverArm, MotionNoiseParams, Pose, apply_odometry, sensor_positions
from .sensing import likelihoods


@dataclass(frozen=True)
class PFParams:
    n_particles: int = 50000
    w_hat: float = 0.75
    sigma_phi_max: float = 0.2
    resample_ratio: float = 0.5
    # wall-following distance, in circumferences, before the search is abandoned
    restart_timeout: float = 3.0

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError("n_particles must be a positive integer")
        if not 0.5 < self.w_hat < 1.0:
            raise ValueError("w_hat must lie in (0.5, 1)")
        if self.sigma_phi_max <= 0:
            raise ValueError("sigma_phi_max must be positive")
        if not 0.0 < self.resample_ratio <= 1.0:
            raise ValueError("resample_ratio must lie in (0, 1]")
        if self.restart_timeout <= 0:
            raise ValueError("restart_timeout must be positive")


@dataclass(frozen=True)
class SeedDistribution:
    mean: tuple[float, float, float]
    stds: tuple[float, float, float]

    def __post_init__(self):
        if any(s < 0 for s in self.stds):
            raise ValueError("seed standard deviations must be >= 0")

    @classmethod
    def from_error_stats(cls, mean, mu_dx, sd_dx, mu_dphi, sd_dphi) -> "SeedDistribution":
        """Spread of mean + 3 std of the land-navigation errors."""
        s_xy = mu_dx + 3.0 * sd_dx
        return cls(tuple(mean), (s_xy, s_xy, mu_dphi + 3.0 * sd_dphi))


# land-navigation error statistics (mu_dx, sd_dx, mu_dphi, sd_dphi) per map
ERROR_STATS = {
    "map1": (0.13, 0.06, 0.55, 0.09),
    "map2": (0.23, 0.20, 0.25, 0.15),
}


@dataclass
class ParticleSet:
    poses: np.ndarray  # (N, 3): x, y, phi
    weights: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.poses.shape[0]

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.poses.copy(), self.weights.copy())


def seed(dist: SeedDistribution, n_particles: int, rng) -> ParticleSet:
    z = rng.standard_normal((n_particles, 3))
    poses = np.asarray(dist.mean, dtype=float)[None, :] + z * np.asarray(dist.stds)[None, :]
    return ParticleSet(poses, np.full(n_particles, 1.0 / n_particles))


def predict(ps: ParticleSet, increment, params: MotionNoiseParams, rng) -> ParticleSet:
    """Propagate every particle with an odometry increment (rot1, trans, rot2)."""
    return ParticleSet(apply_odometry(ps.poses, increment, params, rng), ps.weights.copy())


def update_weights(ps: ParticleSet, m: PolygonMap, s: int, arm: LeverArm, w_hat: float) -> ParticleSet:
    lik = likelihoods(m, sensor_positions(ps.poses, arm), s, w_hat)
    w = ps.weights * lik
    return ParticleSet(ps.poses.copy(), w / w.sum())


def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def systematic_indices(weights: np.ndarray, u0: float) -> np.ndarray:
    """Low-variance resampling with stratum offset ``u0`` in [0, 1)."""
    n = len(weights)
    positions = (u0 + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def resample(ps: ParticleSet, rng, ratio: float = 0.5, force: bool = False) -> ParticleSet:
    """Systematic resampling, triggered when N_eff < ratio * N."""
    n = len(ps)
    if not force and effective_sample_size(ps.weights) >= ratio * n:
        return ps
    idx = systematic_indices(ps.weights, rng.random())
    return ParticleSet(ps.poses[idx].copy(), np.full(n, 1.0 / n))


def circular_mean(angles, weights=None) -> float:
    a = np.asarray(angles, dtype=float)
    w = np.full(a.shape, 1.0 / a.size) if weights is None else np.asarray(weights) / np.sum(weights)
    return math.atan2(float(np.dot(w, np.sin(a))), float(np.dot(w, np.cos(a))))


def circular_std(angles, weights=None) -> float:
    """sqrt(-2 ln R) with R the (weighted) mean resultant length."""
    a = np.asarray(angles, dtype=float)
    w = np.full(a.shape, 1.0 / a.size) if weights is None else np.asarray(weights) / np.sum(weights)
    r = math.hypot(float(np.dot(w, np.sin(a))), float(np.dot(w, np.cos(a))))
    if r <= 0.0:
        return math.inf
    return math.sqrt(max(-2.0 * math.log(min(r, 1.0)), 0.0))


def converged(ps: ParticleSet, sigma_phi_max: float = 0.2) -> bool:
    return circular_std(ps.poses[:, 2], ps.weights) < sigma_phi_max


def estimate(ps: ParticleSet) -> Pose:
    if len(ps) == 0:
        raise ValueError("empty particle set")
    w = ps.weights / ps.weights.sum()
    x = float(np.dot(w, ps.poses[:, 0]))
    y = float(np.dot(w, ps.poses[:, 1]))
    return Pose(x, y, circular_mean(ps.poses[:, 2], w))


def position_spread(ps: ParticleSet) -> float:
    """Weighted RMS distance of particles from their mean position."""
    w = ps.weights / ps.weights.sum()
    mx = np.dot(w, ps.poses[:, 0])
    my = np.dot(w, ps.poses[:, 1])
    return float(math.sqrt(np.dot(w, (ps.poses[:, 0] - mx) ** 2 + (ps.poses[:, 1] - my) ** 2)))


def heading_error(a: float, b: float) -> float:
    return abs(wrap_angle(a - b))
