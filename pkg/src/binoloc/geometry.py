"""Polygon boundary maps and the boundary orientation profile.

A map is a simple closed polygon. Vertices are stored counter-clockwise so
that a robot following the boundary with the field on its left turns by a
total of +2*pi per loop.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ON_EDGE_TOL = 1e-12
FIXTURE_MAPS = ("map1", "map2")


class MapError(ValueError):
    """Raised for malformed or degenerate boundary maps."""


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class OrientationProfile:
    """Piecewise-constant heading as a function of arclength.

    ``values[k]`` holds on ``[breakpoints[k], breakpoints[k + 1])``. Outside
    the covered interval the first/last value is held.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if bp.ndim != 1 or vals.ndim != 1 or len(bp) != len(vals) + 1:
            raise ValueError("need len(breakpoints) == len(values) + 1")
        if len(vals) == 0:
            raise ValueError("profile needs at least one segment")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def start(self) -> float:
        return float(self.breakpoints[0])

    @property
    def end(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def total_length(self) -> float:
        return self.end - self.start

    @property
    def n_segments(self) -> int:
        return len(self.values)

    def __call__(self, x):
        """Evaluate the right-continuous profile at arclength(s) ``x``."""
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        idx = np.clip(idx, 0, self.n_segments - 1)
        out = self.values[idx]
        return float(out) if np.ndim(out) == 0 else out

    def left_limit(self, x):
        """Value just below ``x`` (the segment that ends at ``x``)."""
        idx = np.searchsorted(self.breakpoints, x, side="left") - 1
        idx = np.clip(idx, 0, self.n_segments - 1)
        out = self.values[idx]
        return float(out) if np.ndim(out) == 0 else out


def polyline_profile(points, phi0: float | None = 0.0) -> OrientationProfile:
    """Turning function of an open polyline.

    Headings are accumulated from wrapped turns so that the profile is
    unwrapped. With ``phi0=None`` the first segment keeps its absolute
    heading; otherwise it starts at ``phi0``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("polyline needs at least two points")
    seg = np.diff(pts, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(lengths <= 0.0):
        raise MapError("zero-length segment in polyline")
    headings = np.arctan2(seg[:, 1], seg[:, 0])
    turns = wrap_angle(np.diff(headings)) if len(headings) > 1 else np.empty(0)
    first = headings[0] if phi0 is None else phi0
    values = first + np.concatenate(([0.0], np.cumsum(turns)))
    breakpoints = np.concatenate(([0.0], np.cumsum(lengths)))
    return OrientationProfile(breakpoints, values)


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True
    return False


@dataclass(frozen=True)
class PolygonMap:
    """Closed simple polygon boundary, stored counter-clockwise."""

    vertices: np.ndarray
    name: str = ""
    reversed_on_load: bool = False
    edge_lengths: np.ndarray = field(init=False, repr=False)
    circumference: float = field(init=False)
    cum_lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MapError("vertices must be an (n, 2) array")
        if not np.all(np.isfinite(v)):
            raise MapError("vertices must be finite")
        if v.shape[0] < 3:
            raise MapError("a map needs at least 3 vertices")
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        if np.any(lengths <= 0.0):
            raise MapError("map has a zero-length edge")
        if abs(_signed_area(v)) <= 0.0:
            raise MapError("map polygon has zero area")
        v.setflags(write=False)
        lengths.setflags(write=False)
        cum = np.concatenate(([0.0], np.cumsum(lengths)))
        cum.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edge_lengths", lengths)
        object.__setattr__(self, "circumference", float(cum[-1]))
        object.__setattr__(self, "cum_lengths", cum)

    @classmethod
    def from_points(cls, points, name: str = "") -> "PolygonMap":
        """Build a map from raw vertices, normalizing winding to CCW.

        Repeated consecutive vertices (including a closing copy of the first
        vertex) are merged.
        """
        pts = [tuple(map(float, p)) for p in points]
        merged: list[tuple[float, float]] = []
        for p in pts:
            if merged and p == merged[-1]:
                log.warning("merging duplicate consecutive vertex %s", p)
                continue
            merged.append(p)
        while len(merged) > 1 and merged[0] == merged[-1]:
            merged.pop()
        v = np.array(merged, dtype=float).reshape(-1, 2)
        if v.shape[0] < 3:
            raise MapError("a map needs at least 3 distinct vertices")
        if not is_simple(v):
            raise MapError("map polygon is self-intersecting")
        rev = _signed_area(v) < 0.0
        if rev:
            v = v[::-1].copy()
        return cls(v, name=name, reversed_on_load=rev)

    @cached_property
    def edge_tuples(self):
        """Edges as plain ((ax, ay), (bx, by)) tuples for scalar loops."""
        v = self.vertices.tolist()
        return tuple((tuple(v[i]), tuple(v[(i + 1) % len(v)])) for i in range(len(v)))

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    def scaled(self, factor: float) -> "PolygonMap":
        return PolygonMap(self.vertices * factor, name=self.name)

    def arclength_of(self, edge: int, t: float) -> float:
        """Arclength coordinate of the point at fraction ``t`` along ``edge``."""
        return float(self.cum_lengths[edge] + t * self.edge_lengths[edge])


def is_simple(v: np.ndarray) -> bool:
    """Brute-force check that no two non-adjacent edges intersect."""
    n = len(v)
    for i in range(n):
        a1, a2 = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(a1, a2, v[j], v[(j + 1) % n]):
                return False
    return True


def point_in_map(m: PolygonMap, p) -> bool:
    """True if ``p`` is inside the map or on its boundary."""
    px, py = float(p[0]), float(p[1])
    inside = False
    for (ax, ay), (bx, by) in m.edge_tuples:
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if (
            abs(cross) <= ON_EDGE_TOL * max(math.hypot(bx - ax, by - ay), 1.0)
            and min(ax, bx) - ON_EDGE_TOL <= px <= max(ax, bx) + ON_EDGE_TOL
            and min(ay, by) - ON_EDGE_TOL <= py <= max(ay, by) + ON_EDGE_TOL
        ):
            return True
        if (ay > py) != (by > py):
            if px < ax + (py - ay) * (bx - ax) / (by - ay):
                inside = not inside
    return inside


def points_in_map(m: PolygonMap, pts) -> np.ndarray:
    """Vectorized inclusive inside test for an ``(k, 2)`` array of points.

    Loops over the (few) edges and vectorizes over the points, which keeps
    every temporary one-dimensional and is several times faster than a
    ``(k, n)`` broadcast for particle-sized inputs.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    px = np.ascontiguousarray(pts[:, 0])
    py = np.ascontiguousarray(pts[:, 1])
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    for (ax, ay), (bx, by) in m.edge_tuples:
        ex, ey = bx - ax, by - ay
        cross = ex * (py - ay) - ey * (px - ax)
        # x_int - px == cross / (by - ay), so the ray test is a sign comparison
        inside ^= ((ay > py) != (by > py)) & ((cross > 0) == (by > ay))
        near = np.flatnonzero(np.abs(cross) <= ON_EDGE_TOL * max(math.hypot(ex, ey), 1.0))
        if near.size:
            qx, qy = px[near], py[near]
            in_box = (
                (qx >= min(ax, bx) - ON_EDGE_TOL)
                & (qx <= max(ax, bx) + ON_EDGE_TOL)
                & (qy >= min(ay, by) - ON_EDGE_TOL)
                & (qy <= max(ay, by) + ON_EDGE_TOL)
            )
            on_edge[near[in_box]] = True
    return inside | on_edge


def _project_to_edges(m: PolygonMap, pts: np.ndarray):
    a = m.vertices
    e = np.roll(a, -1, axis=0) - a
    rel = pts[:, None, :] - a[None, :, :]
    t = np.einsum("kij,ij->ki", rel, e) / (m.edge_lengths**2)[None, :]
    t = np.clip(t, 0.0, 1.0)
    foot = a[None, :, :] + t[:, :, None] * e[None, :, :]
    d = np.hypot(pts[:, None, 0] - foot[:, :, 0], pts[:, None, 1] - foot[:, :, 1])
    return t, foot, d


def closest_boundary_point(m: PolygonMap, p) -> tuple[np.ndarray, float]:
    """Closest point on the boundary and its distance.

    Ties between edges go to the lowest edge index.
    """
    pts = np.asarray(p, dtype=float).reshape(1, 2)
    _, foot, d = _project_to_edges(m, pts)
    k = int(np.argmin(d[0]))
    return foot[0, k].copy(), float(d[0, k])


def boundary_distances(m: PolygonMap, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    _, _, d = _project_to_edges(m, pts)
    return d.min(axis=1)


def boundary_arclength(m: PolygonMap, p) -> float:
    """Arclength coordinate in ``[0, U)`` of the closest boundary point."""
    pts = np.asarray(p, dtype=float).reshape(1, 2)
    t, _, d = _project_to_edges(m, pts)
    k = int(np.argmin(d[0]))
    s = m.arclength_of(k, float(t[0, k]))
    return s % m.circumference


def build_orientation_profile(m: PolygonMap) -> OrientationProfile:
    """Boundary turning function over the doubled vertex loop.

    The polyline visits x_1..x_n, x_1..x_n, x_1, giving 2n segments over
    arclength [0, 2U) with the first heading set to 0.
    """
    doubled = np.vstack([m.vertices, m.vertices, m.vertices[:1]])
    return polyline_profile(doubled, phi0=0.0)


def shifted_vertex_profile(profile: OrientationProfile, i: int) -> OrientationProfile:
    """Boundary window ending at vertex ``i`` of a doubled-loop profile.

    ``i`` is a 0-based index into the doubled vertex list and must lie in the
    second copy (``n <= i < 2n``). The result is defined on ``[-l_i, 0]`` and
    anchored so that the edge arriving at the vertex has value 0.
    """
    n2 = profile.n_segments
    if n2 % 2:
        raise ValueError("expected a doubled-loop profile with 2n segments")
    n = n2 // 2
    if not n <= i < n2:
        raise IndexError(f"vertex index {i} outside second loop [{n}, {n2})")
    li = profile.breakpoints[i]
    anchor = profile.values[i - 1]
    return OrientationProfile(profile.breakpoints - li, profile.values - anchor)


def _parse_text_vertices(text: str):
    pts = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise MapError(f"line {lineno}: expected 'x y', got {raw!r}")
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise MapError(f"line {lineno}: {exc}") from None
    return pts


def parse_map(text: str, name: str = "") -> PolygonMap:
    """Parse map text: 'x y' lines, or a JSON/YAML document with ``vertices``."""
    stripped = text.lstrip()
    if stripped.startswith("{") or stripped.startswith("vertices"):
        if stripped.startswith("{"):
            doc = json.loads(text)
        else:
            import yaml

            doc = yaml.safe_load(text)
        if not isinstance(doc, dict) or "vertices" not in doc:
            raise MapError("structured map document needs a 'vertices' list")
        pts = doc["vertices"]
        name = doc.get("name", name)
    else:
        pts = _parse_text_vertices(text)
    return PolygonMap.from_points(pts, name=name)


def load_map(source: str | Path) -> PolygonMap:
    """Load a map from a file path or a bundled fixture name."""
    src = str(source)
    if src in FIXTURE_MAPS:
        text = resources.files("binoloc.fixtures").joinpath(f"{src}.txt").read_text()
        return parse_map(text, name=src)
    path = Path(src)
    if not path.exists() and path.parent.name == "fixtures" and path.stem in FIXTURE_MAPS:
        # "fixtures/map1.txt" outside a source checkout means the bundled copy
        return load_map(path.stem)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MapError(f"cannot read map file {src}: {exc}") from None
    return parse_map(text, name=path.stem)
