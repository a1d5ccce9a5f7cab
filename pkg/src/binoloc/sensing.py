"""Noisy binary inside/outside sensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PolygonMap, point_in_map, points_in_map


@dataclass(frozen=True)
class BinarySensorConfig:
    # probability that a reading is replaced by a fair coin flip
    noise_factor: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.noise_factor <= 1.0:
            raise ValueError(f"noise_factor must be in [0, 1], got {self.noise_factor}")


def measure(m: PolygonMap, sensor_pos, cfg: BinarySensorConfig, rng) -> int:
    u = rng.random(2)
    if u[0] < cfg.noise_factor:
        return int(u[1] < 0.5)
    return int(point_in_map(m, sensor_pos))


def check_w_hat(w_hat: float) -> None:
    if not 0.5 < w_hat < 1.0:
        raise ValueError(f"w_hat must lie in (0.5, 1), got {w_hat}")


def likelihood(m: PolygonMap, hypothesis_pos, s: int, w_hat: float) -> float:
    """Weight of a hypothesis: ``w_hat`` if it would read ``s``, else ``1 - w_hat``."""
    check_w_hat(w_hat)
    return w_hat if int(point_in_map(m, hypothesis_pos)) == int(s) else 1.0 - w_hat


def likelihoods(m: PolygonMap, positions, s: int, w_hat: float) -> np.ndarray:
    check_w_hat(w_hat)
    agree = points_in_map(m, positions) == bool(s)
    return np.where(agree, w_hat, 1.0 - w_hat)
