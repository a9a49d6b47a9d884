"""Regions, distances, and the safety geometry helper."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from issf import (
    Region,
    SafetyGeometry,
    UnsupportedShapeError,
    ball,
    ball_complement,
    boundary_extremes,
    contains,
    disk,
    disk_union,
    distance_to_set,
)


def _sampled_distance(region: Region, pts: np.ndarray) -> np.ndarray:
    """Brute-force oracle: min distance to a dense boundary sample, zeroed
    inside the closure."""
    bd = region.boundary_points(n_per_piece=4096, seed=3)
    d = np.min(np.linalg.norm(pts[:, None, :] - bd[None, :, :], axis=-1),
               axis=1)
    d[region.closure_contains(pts)] = 0.0
    return d


@pytest.mark.parametrize("region", [
    disk((4.0, 6.0), 2.0),
    disk((-1.0, 0.5), 0.75),
    disk_union([disk((0.0, 0.0), 1.0), disk((3.0, 0.0), 1.5)]),
], ids=["disk", "small_disk", "union"])
def test_distance_matches_boundary_sampling(region):
    rng = np.random.default_rng(11)
    pts = rng.uniform(-6.0, 10.0, size=(1000, 2))
    closed = _sampled_distance(region, pts)
    assert np.max(np.abs(region.distance(pts) - closed)) < 1e-4


def test_complement_distance():
    # distance to the outside of a ball: positive only strictly inside
    comp = ball_complement((0.0, 0.0), 2.0)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    assert np.allclose(comp.distance(pts), [2.0, 1.0, 0.0, 0.0])


@given(px=st.floats(-8, 8), py=st.floats(-8, 8),
       qx=st.floats(-8, 8), qy=st.floats(-8, 8))
@settings(max_examples=80, deadline=None)
def test_distance_is_one_lipschitz(px, py, qx, qy):
    region = disk((4.0, 6.0), 2.0)
    p = np.array([[px, py]])
    q = np.array([[qx, qy]])
    dp, dq = float(region.distance(p)[0]), float(region.distance(q)[0])
    assert abs(dp - dq) <= np.linalg.norm(p - q) + 1e-12


def test_zero_distance_iff_in_closure():
    region = disk((0.0, 0.0), 1.0)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-2.0, 2.0, size=(500, 2))
    d = region.distance(pts)
    inside = region.closure_contains(pts)
    assert np.array_equal(d == 0.0, inside)


def test_open_versus_closed_membership_on_boundary():
    region = disk((0.0, 0.0), 1.0)
    # axis points sit exactly on the circle in floating point
    bd = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    # boundary belongs to the closure but not to the open set
    assert np.all(region.closure_contains(bd))
    assert not np.any(region.contains(bd))
    assert contains(np.array([0.0, 0.0]), region)
    assert not np.any(region.contains(bd * (1.0 + 1e-9)))
    assert np.all(region.contains(bd * (1.0 - 1e-9)))


def test_union_boundary_drops_swallowed_arcs():
    big = disk((0.0, 0.0), 2.0)
    small = disk((0.5, 0.0), 0.5)  # entirely inside big
    u = disk_union([big, small])
    bd = u.boundary_points(n_per_piece=512)
    # nothing from the swallowed circle survives
    assert np.all(np.abs(np.linalg.norm(bd, axis=1) - 2.0) < 1e-9)


def test_ball_in_higher_dimension():
    b = ball((1.0, 2.0, 3.0), 1.5)
    p = np.array([[1.0, 2.0, 5.0]])
    assert b.distance(p)[0] == pytest.approx(0.5)
    bd = b.boundary_points(n_per_piece=256, seed=1)
    assert np.allclose(np.linalg.norm(bd - np.array([1.0, 2.0, 3.0]), axis=1),
                       1.5, atol=1e-12)


def test_distance_to_set_scalar_helper():
    assert distance_to_set(np.array([7.0, 6.0]), disk((4.0, 6.0), 2.0)) == \
        pytest.approx(1.0)


# ---------------------------------------------------------------------------
# safety geometry


def test_benchmark_clearance_and_reach(geometry):
    # window radius 3 minus unsafe radius 2
    assert geometry.kappa() == pytest.approx(1.0, abs=1e-12)
    # farthest point of the closed unsafe disk from the origin
    assert geometry.d2() == pytest.approx(np.sqrt(52.0) + 2.0, abs=1e-12)
    k, d2 = boundary_extremes(geometry)
    assert (k, d2) == (geometry.kappa(), geometry.d2())


def test_annulus_mask(geometry):
    pts = np.array([[4.0, 6.0], [6.5, 6.0], [9.0, 6.0]])
    assert list(geometry.annulus_mask(pts)) == [False, True, False]


def test_shrink_window(geometry):
    g = geometry.shrink_window(2.5)
    assert g.kappa() == pytest.approx(0.5)
    assert g.unsafe is geometry.unsafe


def test_degenerate_geometry_rejected(unsafe_disk):
    with pytest.raises(UnsupportedShapeError):
        SafetyGeometry(unsafe_disk, disk((4.0, 6.0), 2.0))
    with pytest.raises(UnsupportedShapeError):
        # unsafe set pokes out of the window
        SafetyGeometry(disk((0.0, 0.0), 1.0), disk((5.0, 0.0), 2.0))
