"""Path integration and shape matching against the boundary map.

Odometry positions collected while following the boundary are compressed
into dominant points (DPs). The turning function of the DP chain is then
compared with the boundary turning function ending at every map vertex; a
vertex whose mean absolute heading difference is below ``c_min`` gives the
first pose estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    OrientationProfile,
    PolygonMap,
    build_orientation_profile,
    polyline_profile,
)


class NotReady(ValueError):
    """The driven path is too short (or too long) for shape comparison."""


@dataclass(frozen=True)
class LandNavParams:
    L_min: float = 0.5
    e_max: float = 0.01
    c_min: float = 0.2
    U_min: float = 0.5
    N: int = 512

    def __post_init__(self):
        for key in ("L_min", "e_max", "c_min", "U_min"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if self.U_min > 1:
            raise ValueError("U_min must be <= 1")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("N must be an integer >= 2")


PRESETS = {
    "map1": LandNavParams(0.5, 0.01, 0.2, 0.5),
    "map2": LandNavParams(0.5, 0.01, 0.3, 0.4),
}


@dataclass(frozen=True)
class PoseEstimate:
    x_est: tuple[float, float]
    phi_est: float
    c_err: float
    vertex_index: int


def line_fit_error(points) -> float:
    """Mean distance of the interior points to the chord first -> last."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return 0.0
    a, b = pts[0], pts[-1]
    chord = b - a
    interior = pts[1:-1] - a
    norm = math.hypot(chord[0], chord[1])
    if norm == 0.0:
        d = np.hypot(interior[:, 0], interior[:, 1])
    else:
        d = np.abs(chord[0] * interior[:, 1] - chord[1] * interior[:, 0]) / norm
    return float(d.mean())


class DominantPointTrack:
    """Incremental DP generation over a stream of odometry positions.

    ``max_length`` caps the stored DP chain; the oldest DPs are dropped once
    the chain grows longer.
    """

    def __init__(self, x0, params: LandNavParams, max_length: float = math.inf):
        self.params = params
        self.max_length = max_length
        p = (float(x0[0]), float(x0[1]))
        self.dps: list[tuple[float, float]] = [p]
        self.pending: list[tuple[float, float]] = [p]
        self._seg_lengths: list[float] = []

    @property
    def accumulated_length(self) -> float:
        return float(sum(self._seg_lengths))

    def update(self, x) -> tuple[float, float] | None:
        """Feed one odometry position; return the newly committed DP, if any."""
        p = (float(x[0]), float(x[1]))
        last = self.dps[-1]
        if math.hypot(p[0] - last[0], p[1] - last[1]) < self.params.L_min:
            self.pending.append(p)
            return None
        candidate = self.pending + [p]
        if line_fit_error(candidate) < self.params.e_max:
            self.pending = candidate
            return None
        dp = self.pending[-1]
        self.pending = [dp, p]
        if dp == last:
            # the previous DP is the only point that fit; nothing new to commit
            return None
        self._seg_lengths.append(math.hypot(dp[0] - last[0], dp[1] - last[1]))
        self.dps.append(dp)
        self._evict()
        return dp

    def _evict(self) -> None:
        total = self.accumulated_length
        while total > self.max_length and len(self.dps) > 2:
            total -= self._seg_lengths.pop(0)
            self.dps.pop(0)


def path_orientation_profile(dps) -> OrientationProfile:
    if len(dps) < 2:
        raise NotReady("need at least two dominant points")
    return polyline_profile(dps, phi0=0.0)


def sample_points(length: float, n: int) -> np.ndarray:
    """``n`` evenly spaced bin centres on ``[-length, 0]``."""
    return -length + (np.arange(n) + 0.5) * (length / n)


def correlation_errors(
    map_profile: OrientationProfile,
    path_profile: OrientationProfile,
    length: float | None = None,
    n_samples: int = 512,
    min_length: float = 0.0,
) -> np.ndarray:
    """Mean absolute heading difference between path and every boundary window.

    The last ``length`` metres of the path are compared with the boundary
    window of the same length ending at each vertex. Both are anchored on the
    segment arriving at their end point. Entry ``j`` belongs to map vertex
    ``j`` (0-based).
    """
    n2 = map_profile.n_segments
    n = n2 // 2
    U = map_profile.total_length / 2.0
    L = path_profile.total_length if length is None else float(length)
    if L < min_length or L <= 0:
        raise NotReady(f"path length {L:.3f} below required {min_length:.3f}")
    if L > U * (1.0 + 1e-9) or L > path_profile.total_length * (1.0 + 1e-12):
        raise NotReady(f"path length {L:.3f} exceeds circumference or path")
    xs = sample_points(L, n_samples)

    p_end = path_profile.end
    path_vals = path_profile(xs + p_end) - path_profile.left_limit(p_end)

    ends = map_profile.breakpoints[n:n2]
    anchors = map_profile.values[n - 1 : n2 - 1]
    bvals = map_profile(ends[:, None] + xs[None, :]) - anchors[:, None]
    return np.mean(np.abs(bvals - path_vals[None, :]), axis=1)


def vertex_heading(m: PolygonMap, j: int) -> float:
    """Direction of the edge arriving at vertex ``j``."""
    a = m.vertices[j - 1]
    b = m.vertices[j]
    return math.atan2(b[1] - a[1], b[0] - a[0])


def try_match(
    track_or_dps, m: PolygonMap, params: LandNavParams, map_profile: OrientationProfile | None = None
) -> PoseEstimate | None:
    """Pose estimate from the current DP chain, or None if nothing matches yet."""
    dps = track_or_dps.dps if isinstance(track_or_dps, DominantPointTrack) else track_or_dps
    if len(dps) < 2:
        return None
    profile = map_profile if map_profile is not None else build_orientation_profile(m)
    path = path_orientation_profile(dps)
    try:
        c = correlation_errors(
            profile,
            path,
            min(path.total_length, m.circumference),
            params.N,
            min_length=params.U_min * m.circumference,
        )
    except NotReady:
        return None
    j = int(np.argmin(c))
    if not c[j] < params.c_min:
        return None
    x = m.vertices[j]
    return PoseEstimate((float(x[0]), float(x[1])), vertex_heading(m, j), float(c[j]), j)


class LandNavigator:
    """Event-driven matcher: runs the comparison whenever a DP is committed."""

    def __init__(self, m: PolygonMap, params: LandNavParams, x0):
        self.map = m
        self.params = params
        self.profile = build_orientation_profile(m)
        self.track = DominantPointTrack(x0, params, max_length=m.circumference)
        self.n_evaluations = 0

    def update(self, x) -> PoseEstimate | None:
        if self.track.update(x) is None:
            return None
        self.n_evaluations += 1
        return try_match(self.track, self.map, self.params, self.profile)
