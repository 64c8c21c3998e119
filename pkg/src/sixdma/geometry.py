"""Rigid-body geometry of antenna surfaces.

Conventions
-----------
A surface rotation is a triple of Euler angles ``(alpha, beta, gamma)``
about the global x, y and z axes.  The rotation matrix is::

    R(u) = Rx(gamma) @ Ry(beta) @ Rz(alpha)

which maps local surface coordinates to global ones, so that an antenna
at local position ``r_local`` sits at ``q + R(u) @ r_local`` and the
surface normal is ``R(u) @ n_local``.

Placement checks model each surface either by its polygon (exact for the
planar region) or by a circular extended region (CER), a disc centred on
the surface with the surface normal and radius ``d/2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import InvalidInputError

TWO_PI = 2.0 * np.pi
GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0
CONTAINMENT_TOL = 1e-9


def _wrap_angle(x):
    y = np.mod(x, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    return np.where(y >= TWO_PI, 0.0, y)


@dataclass(frozen=True)
class EulerRotation:
    """Euler angles in radians, each stored in ``[0, 2*pi)``."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        angles = np.array([self.alpha, self.beta, self.gamma], dtype=float)
        if not np.all(np.isfinite(angles)):
            raise InvalidInputError(f"non-finite Euler angle in {angles}")
        wrapped = _wrap_angle(angles)
        object.__setattr__(self, "alpha", float(wrapped[0]))
        object.__setattr__(self, "beta", float(wrapped[1]))
        object.__setattr__(self, "gamma", float(wrapped[2]))

    @classmethod
    def from_array(cls, u) -> "EulerRotation":
        u = np.asarray(u, dtype=float)
        if u.shape != (3,):
            raise InvalidInputError(f"rotation needs 3 angles, got shape {u.shape}")
        return cls(*u)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self)


@dataclass(frozen=True)
class SurfacePose:
    """Position (metres) plus rotation of one surface."""

    position: np.ndarray
    rotation: EulerRotation = field(default_factory=EulerRotation)

    def __post_init__(self):
        q = np.asarray(self.position, dtype=float).reshape(-1)
        if q.shape != (3,) or not np.all(np.isfinite(q)):
            raise InvalidInputError(f"position must be a finite 3-vector, got {self.position!r}")
        object.__setattr__(self, "position", q)

    @property
    def vector(self) -> np.ndarray:
        """The 6-entry pose vector ``[q; u]``."""
        return np.concatenate([self.position, self.rotation.as_array()])

    @classmethod
    def from_vector(cls, z) -> "SurfacePose":
        z = np.asarray(z, dtype=float)
        if z.shape != (6,):
            raise InvalidInputError(f"pose vector needs 6 entries, got shape {z.shape}")
        return cls(z[:3], EulerRotation.from_array(z[3:]))


@dataclass(frozen=True)
class SurfaceTemplate:
    """Local geometry shared by every surface of an array.

    Attributes
    ----------
    local_positions : (N, 3) array
        Antenna positions in the surface frame, metres.
    local_normal : (3,) array
        Boresight of the antennas in the surface frame (unit length).
    local_region : (V, 3) array
        Vertices of the planar convex surface polygon in the surface frame.
    cer_diameter : float
        Diameter ``d`` of the circular extended region enclosing the polygon.
    """

    local_positions: np.ndarray
    local_normal: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    local_region: np.ndarray | None = None
    cer_diameter: float = 0.0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.local_positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) == 0:
            raise InvalidInputError("local_positions must be a non-empty (N, 3) array")
        normal = np.asarray(self.local_normal, dtype=float)
        if normal.shape != (3,) or abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            raise InvalidInputError("local_normal must be a unit 3-vector")
        object.__setattr__(self, "local_positions", pos)
        object.__setattr__(self, "local_normal", normal)
        if self.local_region is not None:
            region = np.asarray(self.local_region, dtype=float)
            offsets = (region - region.mean(axis=0)) @ normal
            if np.max(np.abs(offsets)) > 1e-9:
                raise InvalidInputError("local_normal is not orthogonal to the surface polygon")
            diam = max(
                (np.linalg.norm(a - b) for a in region for b in region), default=0.0
            )
            if self.cer_diameter < diam - 1e-12:
                raise InvalidInputError(
                    f"cer_diameter {self.cer_diameter} smaller than polygon diameter {diam}"
                )
            object.__setattr__(self, "local_region", region)

    @property
    def n_antennas(self) -> int:
        return len(self.local_positions)

    def min_spacing(self) -> float:
        pos = self.local_positions
        if len(pos) < 2:
            return np.inf
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        return float(dist[np.triu_indices(len(pos), k=1)].min())

    @classmethod
    def square(cls, wavelength: float) -> "SurfaceTemplate":
        """Square surface of edge ``wavelength`` carrying a 2x2 half-wavelength grid."""
        q = wavelength / 4.0
        positions = np.array([[0.0, y, z] for y in (-q, q) for z in (-q, q)])
        h = wavelength / 2.0
        region = np.array([[0.0, -h, -h], [0.0, h, -h], [0.0, h, h], [0.0, -h, h]])
        return cls(positions, np.array([1.0, 0.0, 0.0]), region, np.sqrt(2.0) * wavelength)


@dataclass(frozen=True)
class Halfspace:
    """The closed set ``{x : normal . (x - anchor) <= 0}``."""

    normal: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if n.shape != (3,) or norm == 0:
            raise InvalidInputError("halfspace normal must be a non-zero 3-vector")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))

    def signed_distance(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.anchor) @ self.normal


@dataclass(frozen=True)
class CircularRegion:
    """A flat disc: the circular extended region of a surface."""

    center: np.ndarray
    normal: np.ndarray
    radius: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidInputError("disc normal must be a unit 3-vector")
        if not self.radius > 0:
            raise InvalidInputError("disc radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "normal", n)

    def _in_plane(self, direction) -> np.ndarray:
        direction = np.asarray(direction, dtype=float)
        return direction - (direction @ self.normal) * self.normal

    def support(self, direction) -> float:
        """``max_{x in disc} direction . x`` in closed form."""
        p = self._in_plane(direction)
        return float(self.center @ direction + self.radius * np.linalg.norm(p))

    def support_point(self, direction) -> np.ndarray:
        """A maximiser of ``direction . x`` over the disc (the centre if degenerate)."""
        p = self._in_plane(direction)
        norm = np.linalg.norm(p)
        if norm < 1e-12:
            return self.center.copy()
        return self.center + self.radius * p / norm


Region = Union[CircularRegion, np.ndarray, Sequence[Sequence[float]]]


def rotation_matrix(u) -> np.ndarray:
    """Rotation matrix ``R(u)`` for Euler angles ``u = (alpha, beta, gamma)``.

    Accepts an :class:`EulerRotation` or any array whose last axis holds the
    three angles; a stack of shape ``(..., 3)`` gives ``(..., 3, 3)``.
    """
    if isinstance(u, EulerRotation):
        u = u.as_array()
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (3,):
        raise InvalidInputError(f"expected trailing axis of 3 angles, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("non-finite Euler angle")
    ca, cb, cg = np.cos(u[..., 0]), np.cos(u[..., 1]), np.cos(u[..., 2])
    sa, sb, sg = np.sin(u[..., 0]), np.sin(u[..., 1]), np.sin(u[..., 2])
    R = np.empty(u.shape[:-1] + (3, 3))
    R[..., 0, 0] = cb * ca
    R[..., 0, 1] = -cb * sa
    R[..., 0, 2] = sb
    R[..., 1, 0] = cg * sa + ca * sg * sb
    R[..., 1, 1] = ca * cg - sa * sg * sb
    R[..., 1, 2] = -cb * sg
    R[..., 2, 0] = sg * sa - cg * ca * sb
    R[..., 2, 1] = ca * sg + cg * sa * sb
    R[..., 2, 2] = cg * cb
    return R


def euler_from_matrix(R) -> EulerRotation:
    """Inverse of :func:`rotation_matrix` (one representative at gimbal lock)."""
    R = np.asarray(R, dtype=float)
    cb = np.hypot(R[0, 0], R[0, 1])
    beta = np.arctan2(R[0, 2], cb)
    if cb > 1e-12:
        alpha = np.arctan2(-R[0, 1], R[0, 0])
        gamma = np.arctan2(-R[1, 2], R[2, 2])
    else:
        # beta = +-pi/2: only alpha -/+ gamma is identifiable, pin gamma = 0
        gamma = 0.0
        alpha = np.arctan2(R[1, 0], R[1, 1])
    return EulerRotation(alpha, beta, gamma)


def global_antenna_positions(pose: SurfacePose, tmpl: SurfaceTemplate) -> np.ndarray:
    """Global antenna coordinates ``q + R(u) r_n``, shape ``(N, 3)``."""
    R = rotation_matrix(pose.rotation)
    return pose.position + tmpl.local_positions @ R.T


def surface_normal(u, tmpl: SurfaceTemplate) -> np.ndarray:
    """Global normal ``R(u) n_local``; vectorises over stacked rotations."""
    return rotation_matrix(u) @ tmpl.local_normal


def surface_polygon(pose: SurfacePose, tmpl: SurfaceTemplate) -> np.ndarray:
    if tmpl.local_region is None:
        raise InvalidInputError("template has no surface polygon")
    return pose.position + tmpl.local_region @ rotation_matrix(pose.rotation).T


def fibonacci_directions(M: int) -> np.ndarray:
    """``M`` near-uniform unit vectors on the sphere, shape ``(M, 3)``.

    Index ``m`` runs over ``0..M-1`` with polar angle
    ``arccos(1 - 2 (m + 0.5) / M)`` and azimuth ``2 pi m / golden mod 2 pi``.
    """
    if int(M) != M or M < 1:
        raise InvalidInputError(f"M must be a positive integer, got {M}")
    m = np.arange(int(M), dtype=float)
    theta = np.arccos(1.0 - 2.0 * (m + 0.5) / M)
    phi = np.mod(m * TWO_PI / GOLDEN_RATIO, TWO_PI)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def _axis_angle_matrix(axis, angle) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def minimal_rotation(source, target) -> np.ndarray:
    """Smallest-angle rotation matrix taking unit ``source`` to unit ``target``."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    axis = np.cross(source, target)
    s = np.linalg.norm(axis)
    c = float(source @ target)
    if s > 1e-300:
        return _axis_angle_matrix(axis / s, np.arctan2(s, c))
    if c > 0:
        return np.eye(3)
    # antipodal: half-turn about a fixed axis orthogonal to source
    helper = np.eye(3)[np.argmin(np.abs(source))]
    aux = np.cross(source, helper)
    return _axis_angle_matrix(aux / np.linalg.norm(aux), np.pi)


def rotation_with_normal(target, tmpl: SurfaceTemplate) -> EulerRotation:
    """Euler angles whose surface normal equals ``target``.

    The in-plane spin is fixed by taking the minimal rotation from the
    template normal to ``target``.
    """
    target = np.asarray(target, dtype=float)
    norm = np.linalg.norm(target)
    if target.shape != (3,) or not np.isfinite(norm) or norm < 1e-12:
        raise InvalidInputError("target normal must be a non-zero finite 3-vector")
    return euler_from_matrix(minimal_rotation(tmpl.local_normal, target / norm))


def cer_of(pose: SurfacePose, tmpl: SurfaceTemplate) -> CircularRegion:
    return CircularRegion(pose.position, surface_normal(pose.rotation, tmpl), tmpl.cer_diameter / 2.0)


def halfspace_of(pose: SurfacePose, tmpl: SurfaceTemplate) -> Halfspace:
    return Halfspace(surface_normal(pose.rotation, tmpl), pose.position)


def halfspace_contains_region(h: Halfspace, region: Region, tol: float = CONTAINMENT_TOL) -> bool:
    """True iff every point of ``region`` lies in ``h`` up to ``tol``.

    ``region`` is a :class:`CircularRegion` or the vertex array of a convex
    polygon (a linear functional peaks at a vertex, so vertices suffice).
    """
    if isinstance(region, CircularRegion):
        peak = region.support(h.normal) - float(h.normal @ h.anchor)
    else:
        pts = np.atleast_2d(np.asarray(region, dtype=float))
        peak = float(np.max(h.signed_distance(pts)))
    return bool(peak <= tol)
