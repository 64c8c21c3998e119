import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_unit
from sixdma.errors import InvalidInputError
from sixdma.geometry import (
    CircularRegion,
    EulerRotation,
    Halfspace,
    SurfacePose,
    SurfaceTemplate,
    euler_from_matrix,
    fibonacci_directions,
    global_antenna_positions,
    halfspace_contains_region,
    rotation_matrix,
    rotation_with_normal,
    surface_normal,
    surface_polygon,
)

angles = st.floats(-20.0, 20.0, allow_nan=False)


def closed_form(a, b, g):
    """Element-by-element evaluation of R(u), written independently of the module."""
    ca, sa, cb, sb, cg, sg = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(g), np.sin(g)
    return np.array([
        [cb * ca, -cb * sa, sb],
        [cg * sa + ca * sg * sb, ca * cg - sa * sg * sb, -cb * sg],
        [sg * sa - cg * ca * sb, ca * sg + cg * sa * sb, cg * cb],
    ])


def test_identity_rotation():
    np.testing.assert_array_equal(rotation_matrix(EulerRotation()), np.eye(3))


def test_quarter_turn_gamma_matches_closed_form():
    R = rotation_matrix([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(R, closed_form(0.0, 0.0, np.pi / 2), atol=1e-15)
    # gamma alone turns about x: y -> z
    np.testing.assert_allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)


def test_frozen_rotation():
    expected = np.array([
        [0.7306816499355124, -0.22602632124962302, -0.644217687237691],
        [-0.41444199432919854, 0.6030043987602139, -0.681632986593423],
        [0.5425330955655644, 0.7650475783754858, 0.34692944965489897],
    ])
    np.testing.assert_allclose(rotation_matrix([0.3, -0.7, 1.1]), expected, rtol=0, atol=1e-15)


def test_factorisation_order():
    # R = Rx(gamma) Ry(beta) Rz(alpha)
    def rx(t):
        return np.array([[1, 0, 0], [0, np.cos(t), -np.sin(t)], [0, np.sin(t), np.cos(t)]])

    def ry(t):
        return np.array([[np.cos(t), 0, np.sin(t)], [0, 1, 0], [-np.sin(t), 0, np.cos(t)]])

    def rz(t):
        return np.array([[np.cos(t), -np.sin(t), 0], [np.sin(t), np.cos(t), 0], [0, 0, 1]])

    a, b, g = 0.4, 1.3, -2.2
    np.testing.assert_allclose(rotation_matrix([a, b, g]), rx(g) @ ry(b) @ rz(a), atol=1e-14)


@given(angles, angles, angles)
def test_rotation_is_special_orthogonal(a, b, g):
    R = rotation_matrix([a, b, g])
    assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-12
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_stacked_rotations_match_single():
    u = np.random.default_rng(1).uniform(-7, 7, (5, 3))
    stacked = rotation_matrix(u)
    for k in range(5):
        np.testing.assert_array_equal(stacked[k], rotation_matrix(u[k]))


@pytest.mark.parametrize("bad", [[np.nan, 0, 0], [0, np.inf, 0]])
def test_non_finite_angles_rejected(bad):
    with pytest.raises(InvalidInputError):
        rotation_matrix(bad)
    with pytest.raises(InvalidInputError):
        EulerRotation(*bad)


def test_angles_wrapped_into_range():
    r = EulerRotation(-0.5, 7.0, 2 * np.pi)
    assert 0 <= r.alpha < 2 * np.pi and 0 <= r.beta < 2 * np.pi and 0 <= r.gamma < 2 * np.pi
    np.testing.assert_allclose(r.matrix, rotation_matrix([-0.5, 7.0, 2 * np.pi]), atol=1e-14)
    assert EulerRotation(-1e-300).alpha < 2 * np.pi


@given(angles, angles, angles)
def test_euler_from_matrix_round_trip(a, b, g):
    R = rotation_matrix([a, b, g])
    np.testing.assert_allclose(euler_from_matrix(R).matrix, R, atol=1e-12)


def test_euler_from_matrix_gimbal_lock():
    for beta in (np.pi / 2, 3 * np.pi / 2):
        R = rotation_matrix([0.7, beta, 0.2])
        np.testing.assert_allclose(euler_from_matrix(R).matrix, R, atol=1e-12)


def test_pose_vector_round_trip():
    pose = SurfacePose([1.0, -2.0, 0.5], EulerRotation(0.1, 0.2, 0.3))
    again = SurfacePose.from_vector(pose.vector)
    np.testing.assert_array_equal(again.position, pose.position)
    assert again.rotation == pose.rotation
    assert pose.vector.shape == (6,)
    with pytest.raises(InvalidInputError):
        SurfacePose.from_vector(np.zeros(5))


def test_square_template_layout(template):
    q = 0.125 / 4
    expected = {(0.0, sy * q, sz * q) for sy in (-1, 1) for sz in (-1, 1)}
    got = {tuple(np.round(p, 15)) for p in template.local_positions}
    assert got == {tuple(np.round(e, 15)) for e in expected}
    assert template.min_spacing() >= 0.125 / 2 - 1e-15
    assert template.cer_diameter == pytest.approx(np.sqrt(2) * 0.125)


def test_template_rejects_small_cer():
    with pytest.raises(InvalidInputError):
        SurfaceTemplate(np.zeros((1, 3)), np.array([1.0, 0, 0]),
                        np.array([[0, -1, -1], [0, 1, -1], [0, 1, 1], [0, -1, 1.0]]), 1.0)


def test_identity_pose_keeps_local_positions(template):
    np.testing.assert_array_equal(global_antenna_positions(SurfacePose(np.zeros(3)), template), template.local_positions)


def test_global_positions_are_isometric(template):
    rng = np.random.default_rng(3)
    d0 = np.linalg.norm(template.local_positions[:, None] - template.local_positions[None], axis=-1)
    for _ in range(50):
        pose = SurfacePose(rng.normal(size=3), EulerRotation(*rng.uniform(0, 7, 3)))
        g = global_antenna_positions(pose, template)
        d = np.linalg.norm(g[:, None] - g[None], axis=-1)
        assert np.max(np.abs(d - d0)) < 1e-12


def test_surface_normal_examples(template):
    np.testing.assert_array_equal(surface_normal(EulerRotation(), template), [1.0, 0.0, 0.0])
    # beta = -pi/2 maps x to +z per R's first column (cos b cos a, ., -cos a sin b)
    u = EulerRotation(0.0, -np.pi / 2, 0.0)
    np.testing.assert_allclose(rotation_matrix(u)[:, 0], [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(surface_normal(u, template), [0, 0, 1], atol=1e-15)


def test_fibonacci_small_cases():
    np.testing.assert_allclose(fibonacci_directions(1), [[1.0, 0.0, 0.0]], atol=1e-15)
    theta = np.arccos(fibonacci_directions(2)[:, 2])
    np.testing.assert_allclose(theta, [np.pi / 3, 2 * np.pi / 3], atol=1e-12)
    expected = np.array([
        [0.6614378277661476, 0.0, 0.75],
        [-0.7139543462022454, -0.6540406650499068, 0.25],
        [0.08464959396472602, 0.9645384628108964, -0.2500000000000001],
        [0.4024444785343668, -0.5249175570479632, -0.75],
    ])
    np.testing.assert_allclose(fibonacci_directions(4), expected, atol=1e-15)


@pytest.mark.parametrize("bad", [0, -3, 2.5])
def test_fibonacci_rejects_bad_counts(bad):
    with pytest.raises(InvalidInputError):
        fibonacci_directions(bad)


def test_fibonacci_packing():
    d = fibonacci_directions(512)
    assert np.max(np.abs(np.linalg.norm(d, axis=1) - 1)) < 1e-12
    cos = np.clip(d @ d.T, -1, 1)
    np.fill_diagonal(cos, -1)
    min_angle = np.arccos(cos.max())
    ideal = np.sqrt(8 * np.pi / (np.sqrt(3) * 512))
    assert abs(min_angle - ideal) / ideal < 0.2
    np.testing.assert_array_equal(d, fibonacci_directions(512))


def test_rotation_with_normal_examples(template):
    assert rotation_with_normal([1.0, 0, 0], template) == EulerRotation()
    anti = rotation_with_normal([-1.0, 0, 0], template)
    assert surface_normal(anti, template) @ template.local_normal == pytest.approx(-1, abs=1e-9)
    with pytest.raises(InvalidInputError):
        rotation_with_normal([0.0, 0, 0], template)


def test_rotation_with_normal_round_trip(template):
    rng = np.random.default_rng(11)
    targets = np.vstack([random_unit(rng, 200), np.eye(3), -np.eye(3)])
    errs = [np.linalg.norm(surface_normal(rotation_with_normal(t, template), template) - t) for t in targets]
    assert max(errs) < 1e-9


def test_surface_polygon_requires_region():
    tmpl = SurfaceTemplate(np.zeros((1, 3)))
    with pytest.raises(InvalidInputError):
        surface_polygon(SurfacePose(np.zeros(3)), tmpl)


class TestContainment:
    h = Halfspace(np.array([0.0, 0.0, 1.0]), np.zeros(3))

    def test_interior_disc(self):
        disc = CircularRegion(np.array([0, 0, -1.0]), np.array([0, 1.0, 0]), 0.1)
        assert halfspace_contains_region(self.h, disc)

    def test_tangent_disc(self):
        disc = CircularRegion(np.array([0, 0, -0.1]), np.array([0, 1.0, 0]), 0.1)
        assert halfspace_contains_region(self.h, disc, tol=0.0)

    def test_disc_straddling_boundary(self):
        disc = CircularRegion(np.zeros(3), np.array([1.0, 0, 1.0]) / np.sqrt(2), 0.2)
        assert not halfspace_contains_region(self.h, disc)

    def test_parallel_disc_on_boundary(self):
        disc = CircularRegion(np.zeros(3), np.array([0, 0, 1.0]), 0.5)
        assert halfspace_contains_region(self.h, disc)

    def test_polygon_vertices(self):
        assert halfspace_contains_region(self.h, np.array([[0, 0, -1.0], [1, 1, 0]]))
        assert not halfspace_contains_region(self.h, np.array([[0, 0, -1.0], [1, 1, 1e-6]]))

    def test_support_formula_against_sampling(self):
        rng = np.random.default_rng(5)
        t = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
        for _ in range(200):
            nu = random_unit(rng)
            disc = CircularRegion(rng.normal(size=3) * 0.3, nu, rng.uniform(0.05, 0.5))
            h = Halfspace(random_unit(rng), rng.normal(size=3) * 0.3)
            e1 = np.cross(nu, [1.0, 0, 0] if abs(nu[0]) < 0.9 else [0, 1.0, 0])
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(nu, e1)
            pts = disc.center + disc.radius * (np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2)
            brute = float(np.max((pts - h.anchor) @ h.normal))
            exact = disc.support(h.normal) - h.normal @ h.anchor
            slack = disc.radius * (1 - np.cos(np.pi / 10_000)) + 1e-12
            assert brute <= exact + 1e-12 and exact - brute <= slack
            if abs(exact) > slack:
                assert halfspace_contains_region(h, disc, tol=0.0) == (brute <= 0)
