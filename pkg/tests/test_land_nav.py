import math

import numpy as np
import pytest

from binoloc.geometry import PolygonMap, build_orientation_profile, polyline_profile
from binoloc.land_nav import (
    PRESETS,
    DominantPointTrack,
    LandNavigator,
    LandNavParams,
    NotReady,
    correlation_errors,
    line_fit_error,
    path_orientation_profile,
    sample_points,
    try_match,
    vertex_heading,
)

P = LandNavParams(L_min=0.5, e_max=0.01, c_min=0.2, U_min=0.5)


def boundary_walk(m, end_vertex, length, spacing=0.05):
    """Points along the boundary, ending at ``end_vertex``, covering ``length``."""
    U = m.circumference
    s_end = m.cum_lengths[end_vertex] + U
    s = np.arange(s_end - length, s_end + 1e-9, spacing)
    s[-1] = s_end
    s = s % U
    edge = np.searchsorted(m.cum_lengths, s, side="right") - 1
    edge = np.minimum(edge, m.n - 1)
    t = (s - m.cum_lengths[edge]) / m.edge_lengths[edge]
    a = m.vertices[edge]
    b = np.roll(m.vertices, -1, axis=0)[edge]
    return a + t[:, None] * (b - a)


def vertex_replay(m, end_vertex, n_edges):
    """Exact boundary polyline of the last ``n_edges`` edges arriving at ``end_vertex``."""
    idx = [(end_vertex - n_edges + k) % m.n for k in range(n_edges + 1)]
    return m.vertices[idx]


L_SHAPE = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]


def test_table2_presets():
    assert (PRESETS["map1"].c_min, PRESETS["map1"].U_min) == (0.2, 0.5)
    assert (PRESETS["map2"].c_min, PRESETS["map2"].U_min) == (0.3, 0.4)
    assert PRESETS["map1"].L_min == PRESETS["map2"].L_min == 0.5
    assert PRESETS["map1"].e_max == PRESETS["map2"].e_max == 0.01


@pytest.mark.parametrize("kw", [{"L_min": 0}, {"c_min": -1}, {"U_min": 1.5}, {"N": 1}])
def test_param_validation(kw):
    with pytest.raises(ValueError):
        LandNavParams(**kw)


@pytest.mark.parametrize(
    "pts, expected",
    [
        ([(0, 0), (1, 0), (2, 0)], 0.0),
        ([(0, 0), (1, 0.1), (2, 0)], 0.1),
        ([(0, 0), (1, 0.1), (1, -0.1), (2, 0)], 0.1),
        ([(0, 0), (1, 1)], 0.0),
    ],
)
def test_line_fit_error(pts, expected):
    assert line_fit_error(pts) == pytest.approx(expected)


def test_first_point_is_first_dp():
    tr = DominantPointTrack((3.0, 4.0), P)
    assert tr.dps == [(3.0, 4.0)]
    assert tr.accumulated_length == 0.0


def test_straight_line_emits_no_dp():
    tr = DominantPointTrack((0, 0), P)
    assert all(tr.update((0.1 * k, 0.0)) is None for k in range(1, 60))
    assert tr.dps == [(0.0, 0.0)]


def test_l_shaped_path_emits_corner_dp():
    tr = DominantPointTrack((0, 0), P)
    pts = [(0.1 * k, 0.0) for k in range(1, 21)] + [(2.0, 0.1 * k) for k in range(1, 21)]
    emitted = [dp for dp in map(tr.update, pts) if dp is not None]
    assert len(emitted) == 1
    assert math.dist(emitted[0], (2.0, 0.0)) <= 2 * 0.1


def test_track_length_capped():
    tr = DominantPointTrack((0, 0), P, max_length=5.0)
    for k in range(1, 400):
        ang = 0.05 * k
        tr.update((3 * math.cos(ang), 3 * math.sin(ang)))
    assert len(tr.dps) > 2
    assert tr.accumulated_length <= 5.0
    seg = sum(math.dist(a, b) for a, b in zip(tr.dps, tr.dps[1:]))
    assert tr.accumulated_length == pytest.approx(seg)


def test_path_profile_examples():
    prof = path_orientation_profile([(0, 0), (1, 0)])
    assert prof(0.5) == 0.0 and prof.total_length == 1.0
    prof = path_orientation_profile([(0, 0), (1, 0), (1, 1)])
    assert prof.values.tolist() == pytest.approx([0.0, math.pi / 2])
    with pytest.raises(NotReady):
        path_orientation_profile([(0, 0)])


def test_rotated_path_profile_differs_by_constant():
    pts = np.array([(0, 0), (1, 0), (1.5, 0.7), (0.8, 1.9)])
    c, s = math.cos(0.9), math.sin(0.9)
    rot = pts @ np.array([[c, s], [-s, c]])
    a = polyline_profile(pts, phi0=None).values
    b = polyline_profile(rot, phi0=None).values
    assert np.allclose(b - a, 0.9)


def test_sample_points_are_bin_centres():
    xs = sample_points(2.0, 4)
    assert xs.tolist() == pytest.approx([-1.75, -1.25, -0.75, -0.25])


def test_identical_window_gives_zero(map1):
    prof = build_orientation_profile(map1)
    for j in range(map1.n):
        path = polyline_profile(vertex_replay(map1, j, map1.n - 2))
        c = correlation_errors(prof, path, n_samples=512)
        assert c[j] == pytest.approx(0.0, abs=1e-9)


def test_rotation_and_translation_invariance(map1):
    prof = build_orientation_profile(map1)
    pts = boundary_walk(map1, 3, 25.0)
    c0 = correlation_errors(prof, polyline_profile(pts))
    c, s = math.cos(2.1), math.sin(2.1)
    moved = pts @ np.array([[c, s], [-s, c]]) + (7.0, -3.0)
    c1 = correlation_errors(prof, polyline_profile(moved, phi0=None))
    assert np.allclose(c0, c1, atol=1e-9)


def test_square_corners_are_indistinguishable(square):
    # four-fold symmetry: the last two edges fit every corner equally well
    prof = build_orientation_profile(square)
    path = polyline_profile([(1, 0), (1, 1), (0, 1)])
    c = correlation_errors(prof, path, length=2.0, n_samples=200)
    assert np.allclose(c, 0.0, atol=1e-12)


def test_last_two_edges_unique_on_asymmetric_map():
    m = PolygonMap.from_points(L_SHAPE)
    prof = build_orientation_profile(m)
    path = polyline_profile(vertex_replay(m, 4, 2))
    c = correlation_errors(prof, path, length=2.0, n_samples=200)
    assert c[4] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.delete(c, 4) >= math.pi / 4 - 1e-12)


def test_correlation_matches_brute_force_window(map1):
    prof = build_orientation_profile(map1)
    path = polyline_profile(boundary_walk(map1, 2, 24.0))
    c = correlation_errors(prof, path, n_samples=256)
    xs = sample_points(path.total_length, 256)
    theta_r = path(xs + path.end) - path.left_limit(path.end)
    for j in range(map1.n):
        end = prof.breakpoints[map1.n + j]
        theta_b = prof(xs + end) - prof.left_limit(end)
        assert c[j] == pytest.approx(np.mean(np.abs(theta_b - theta_r)), abs=1e-12)
    # sampled walks cut no corners here, so the true vertex stays near zero
    assert int(np.argmin(c)) == 2


def test_correlation_readiness(square):
    prof = build_orientation_profile(square)
    path = polyline_profile([(1, 0), (1, 1), (0, 1)])
    with pytest.raises(NotReady):
        correlation_errors(prof, path, length=2.0, min_length=2.5)
    with pytest.raises(NotReady):
        correlation_errors(prof, path, length=3.0)


def test_vertex_heading_incoming_edge(square):
    assert vertex_heading(square, 1) == 0.0
    assert vertex_heading(square, 2) == pytest.approx(math.pi / 2)


def test_try_match_returns_incoming_heading():
    m = PolygonMap.from_points(L_SHAPE)
    dps = [tuple(p) for p in vertex_replay(m, 1, 5)]
    est = try_match(dps, m, LandNavParams(c_min=0.1, U_min=0.5))
    assert est.vertex_index == 1
    assert est.x_est == (2.0, 0.0) and est.phi_est == 0.0 and est.c_err == pytest.approx(0.0)


def test_try_match_none_when_above_threshold(square):
    # a straight path never looks like the square's corners
    dps = [(0, 0), (3.5, 0)]
    assert try_match(dps, square, LandNavParams(c_min=0.1, U_min=0.5)) is None


def test_try_match_none_when_too_short(map1):
    dps = [tuple(p) for p in map1.vertices[:3]]
    assert try_match(dps, map1, PRESETS["map1"]) is None


def test_unique_vertex_below_threshold(map2):
    # exact boundary replay ending at vertex 6: only that vertex passes c_min
    prof = build_orientation_profile(map2)
    params = PRESETS["map2"]
    dps = [tuple(p) for p in np.vstack([map2.vertices[7:], map2.vertices[:7]])]
    c = correlation_errors(prof, polyline_profile(dps))
    assert np.flatnonzero(c < params.c_min).tolist() == [6]
    est = try_match(dps, map2, params)
    assert est.vertex_index == 6


def test_navigator_matches_on_noise_free_replay(map1):
    pts = boundary_walk(map1, 5, map1.circumference, spacing=0.05)
    nav = LandNavigator(map1, PRESETS["map1"], pts[0])
    est = None
    for p in pts[1:]:
        est = nav.update(p) or est
        if est is not None:
            break
    assert est is not None and nav.n_evaluations > 0
    assert est.c_err < PRESETS["map1"].c_min
