import numpy as np
import pytest

from conftest import random_unit
from sixdma.errors import InvalidInputError, PlacementError
from sixdma.geometry import EulerRotation, rotation_with_normal, surface_normal
from sixdma.placement import (
    PlacementState,
    initial_guess_position,
    place_all,
    place_surface,
    select_next_surface,
    snap_parallel,
    tangent_hyperplane,
)

R = 0.5  # CER radius used by the hand-worked cases


def state_with_first(normals):
    st = PlacementState(np.array(normals, dtype=float), R)
    st.place_first(0)
    return st


def random_rotations(rng, B):
    return [EulerRotation(*rng.uniform(-np.pi, np.pi, 3)) for _ in range(B)]


class TestSelection:
    def test_best_aligned_pending(self):
        st = state_with_first([[1, 0, 0], [0, 1, 0], [np.sqrt(0.5), np.sqrt(0.5), 0]])
        assert select_next_surface(st) == 2

    def test_ties_go_to_lowest_index(self):
        st = state_with_first([[1, 0, 0], [0, 1, 0], [0, -1, 0]])
        assert select_next_surface(st) == 1

    def test_errors(self):
        st = PlacementState(np.eye(3), R)
        with pytest.raises(InvalidInputError):
            select_next_surface(st)
        st.place_first(0)
        with pytest.raises(InvalidInputError):
            st.place_first(1)


class TestTangentPlane:
    def test_perpendicular_normals(self):
        st = state_with_first([[1, 0, 0], [0, 1, 0]])
        h, b_tan, x_tan = tangent_hyperplane(st, 1)
        assert b_tan == 0
        np.testing.assert_allclose(x_tan, [0, R, 0], atol=1e-15)
        np.testing.assert_allclose(h.normal, [0, 1, 0])

    def test_initial_guess_steps_back(self):
        st = state_with_first([[1, 0, 0], [0, 1, 0]])
        _, b_tan, x_tan = tangent_hyperplane(st, 1)
        np.testing.assert_allclose(initial_guess_position(x_tan, b_tan, 1, st), [-R, R, 0], atol=1e-15)

    def test_tilted_normal(self):
        n = np.array([np.cos(0.3), np.sin(0.3), 0.0])
        st = state_with_first([[1, 0, 0], n])
        _, _, x_tan = tangent_hyperplane(st, 1)
        assert x_tan @ n == pytest.approx(R * np.sin(0.3))
        q = initial_guess_position(x_tan, 0, 1, st)
        proj = np.array([1, 0, 0]) - np.cos(0.3) * n
        np.testing.assert_allclose(q, x_tan - R * proj / np.linalg.norm(proj), atol=1e-15)

    def test_parallel_has_no_initial_guess(self):
        st = state_with_first([[1, 0, 0], [1, 0, 0]])
        _, b_tan, x_tan = tangent_hyperplane(st, 1)
        assert initial_guess_position(x_tan, b_tan, 1, st) is None


class TestSmallCases:
    def test_single_surface(self):
        rep = place_all([[0, 0, 1.0]], R)
        np.testing.assert_array_equal(rep.positions, [[0, 0, 0]])
        assert rep.cer_pairs_ok and rep.diameter_growth == []
        assert rep.bounding_edge == pytest.approx(2 * R, rel=1e-2)

    def test_antipodal_pair(self):
        rep = place_all([[1.0, 0, 0], [-1.0, 0, 0]], R)
        assert rep.cer_pairs_ok and rep.bound_ok
        assert rep.positions[1] @ np.array([1.0, 0, 0]) <= 1e-12

    def test_identical_pair_side_by_side(self):
        rep = place_all([[0, 0, 1.0], [0, 0, 1.0]], R)
        assert rep.cer_pairs_ok
        assert abs(rep.positions[1, 2]) < 1e-12
        assert np.linalg.norm(rep.positions[1] - rep.positions[0]) >= 2 * R - 1e-12

    def test_place_surface_rejects_placed(self):
        st = state_with_first([[1, 0, 0], [0, 1, 0]])
        place_surface(st, 1)
        with pytest.raises(InvalidInputError):
            place_surface(st, 1)


def test_random_sets_are_feasible(template):
    rng = np.random.default_rng(0)
    for _ in range(100):
        rots = random_rotations(rng, 8)
        normals = np.array([surface_normal(r, template) for r in rots])
        rep = place_all(normals, template.cer_diameter / 2, rots, template)
        assert rep.cer_pairs_ok and rep.polygon_pairs_ok and rep.bound_ok and rep.growth_ok
        assert sorted(rep.order) == list(range(8))


def test_random_normals_without_template():
    rng = np.random.default_rng(1)
    for _ in range(50):
        rep = place_all(random_unit(rng, 6), 0.1)
        assert rep.feasible and rep.polygon_pairs_ok is None


def test_deterministic(template):
    rots = random_rotations(np.random.default_rng(2), 8)
    normals = np.array([surface_normal(r, template) for r in rots])
    a = place_all(normals, 0.1, rots, template)
    b = place_all(normals, 0.1, rots, template)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert a.order == b.order and a.branches == b.branches


def test_region_centring(template):
    rots = random_rotations(np.random.default_rng(3), 8)
    normals = np.array([surface_normal(r, template) for r in rots])
    free = place_all(normals, template.cer_diameter / 2, rots, template)
    boxed = place_all(normals, template.cer_diameter / 2, rots, template, region_edge=2.0)
    np.testing.assert_allclose(boxed.positions - boxed.offset, free.positions, atol=1e-12)
    assert boxed.bounding_edge == pytest.approx(free.bounding_edge)
    with pytest.raises(PlacementError):
        place_all(normals, template.cer_diameter / 2, rots, template, region_edge=0.05)


def test_snapping(template):
    n = np.array([[0, 0, 1.0], [1e-8, 0, 1.0]])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    snapped, _, pairs = snap_parallel(n)
    np.testing.assert_array_equal(snapped[1], snapped[0])
    assert pairs == [(1, 0)]
    rots = [rotation_with_normal(v, template) for v in n]
    rep = place_all(n, template.cer_diameter / 2, rots, template)
    assert rep.snapped == [(1, 0)] and rep.feasible


def test_input_validation():
    with pytest.raises(InvalidInputError):
        PlacementState(np.array([[1.0, 1.0, 0.0]]), R)
    with pytest.raises(InvalidInputError):
        PlacementState(np.eye(3), 0.0)
    with pytest.raises(InvalidInputError):
        place_all(np.eye(3), R, rotations=[EulerRotation(0, 0, 0)])
