"""Directional gains, steering vectors and per-user channel covariance."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import SurfacePose, SurfaceTemplate, rotation_matrix


@dataclass(frozen=True)
class RadiationPattern:
    """Parameterised sector-antenna element pattern.

    Attenuation relative to boresight, in dB, for a local direction with
    azimuth ``phi`` and zenith ``theta`` (boresight at ``phi = 0``,
    ``theta = 90 deg``)::

        A_H(phi)   = -min(12 (phi / beamwidth)^2, front_back_db)
        A_V(theta) = -min(12 ((theta - 90deg) / vertical_beamwidth)^2, side_lobe_db)
        A          = -min(-(A_H + A_V), front_back_db)

    and the element gain is ``max_gain_dbi + A`` dBi.  ``isotropic=True``
    gives unit gain in every direction.
    """

    beamwidth: float = np.deg2rad(65.0)
    vertical_beamwidth: float | None = None
    max_gain_dbi: float = 8.0
    front_back_db: float = 30.0
    side_lobe_db: float = 30.0
    isotropic: bool = False

    def __post_init__(self):
        if not (0 < self.beamwidth <= 2 * np.pi):
            raise InvalidInputError(f"beamwidth out of range: {self.beamwidth}")
        if self.vertical_beamwidth is None:
            object.__setattr__(self, "vertical_beamwidth", self.beamwidth)

    @classmethod
    def unit(cls) -> "RadiationPattern":
        return cls(isotropic=True, max_gain_dbi=0.0)

    @property
    def max_gain(self) -> float:
        return 1.0 if self.isotropic else 10.0 ** (self.max_gain_dbi / 10.0)

    @property
    def floor_gain(self) -> float:
        if self.isotropic:
            return 1.0
        return 10.0 ** ((self.max_gain_dbi - self.front_back_db) / 10.0)

    def attenuation_db(self, local_dirs) -> np.ndarray:
        d = np.asarray(local_dirs, dtype=float)
        phi = np.arctan2(d[..., 1], d[..., 0])
        theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
        a_h = -np.minimum(12.0 * (phi / self.beamwidth) ** 2, self.front_back_db)
        a_v = -np.minimum(12.0 * ((theta - np.pi / 2) / self.vertical_beamwidth) ** 2, self.side_lobe_db)
        return -np.minimum(-(a_h + a_v), self.front_back_db)

    def gain(self, local_dirs) -> np.ndarray:
        """Linear power gain for unit directions given in the boresight frame."""
        local_dirs = np.asarray(local_dirs, dtype=float)
        if self.isotropic:
            return np.ones(local_dirs.shape[:-1])
        return 10.0 ** ((self.max_gain_dbi + self.attenuation_db(local_dirs)) / 10.0)


def boresight_frame(local_normal) -> np.ndarray:
    """Rows are the pattern axes (boresight, horizontal, vertical) in the surface frame."""
    n = np.asarray(local_normal, dtype=float)
    up = np.array([0.0, 0.0, 1.0])
    if abs(n @ up) > 1.0 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    v = up - (up @ n) * n
    v /= np.linalg.norm(v)
    return np.stack([n, np.cross(v, n), v])


def gain_matrix(rotations, doas, pattern: RadiationPattern, local_normal=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Gains of surfaces with rotation matrices ``(B, 3, 3)`` for DoAs ``(L, 3)``; shape ``(B, L)``."""
    rotations = np.asarray(rotations, dtype=float)
    doas = np.atleast_2d(np.asarray(doas, dtype=float))
    if pattern.isotropic:
        return np.ones((rotations.shape[0], doas.shape[0]))
    frame = boresight_frame(local_normal)
    # local direction R^T f, then expressed on the pattern axes
    local = np.einsum("bji,lj->bli", rotations, doas)
    return pattern.gain(local @ frame.T)


def antenna_gain(u, doa, pattern: RadiationPattern, tmpl: SurfaceTemplate | None = None) -> float:
    """Linear gain ``G(R(u)^T f)`` of a surface with rotation ``u`` toward ``doa``."""
    normal = (1.0, 0.0, 0.0) if tmpl is None else tmpl.local_normal
    R = rotation_matrix(u)[None]
    return float(gain_matrix(R, np.asarray(doa, dtype=float)[None], pattern, normal)[0, 0])


@dataclass(frozen=True)
class PathSet:
    """Multipath description of one user: DoAs ``(L, 3)`` and average powers ``(L,)``."""

    doas: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        doas = np.atleast_2d(np.asarray(self.doas, dtype=float))
        powers = np.atleast_1d(np.asarray(self.powers, dtype=float))
        if doas.ndim != 2 or doas.shape[1] != 3 or len(doas) == 0:
            raise InvalidInputError("doas must be a non-empty (L, 3) array")
        if powers.shape != (len(doas),):
            raise InvalidInputError("one power per path is required")
        if np.max(np.abs(np.linalg.norm(doas, axis=1) - 1.0)) > 1e-9:
            raise InvalidInputError("every DoA must be a unit vector")
        if np.any(powers < 0) or not np.all(np.isfinite(powers)):
            raise InvalidInputError("path powers must be finite and non-negative")
        object.__setattr__(self, "doas", doas)
        object.__setattr__(self, "powers", powers)

    @property
    def n_paths(self) -> int:
        return len(self.powers)


@dataclass(frozen=True)
class ArrayState:
    """A full array configuration: one pose per surface plus shared hardware.

    ``template`` may be a single :class:`SurfaceTemplate` or one per pose
    (all with the same antenna count).
    """

    poses: tuple
    template: SurfaceTemplate | tuple
    pattern: RadiationPattern = field(default_factory=RadiationPattern)
    wavelength: float = 0.125

    def __post_init__(self):
        poses = tuple(self.poses)
        if len(poses) < 1:
            raise InvalidInputError("an array needs at least one surface")
        if not self.wavelength > 0:
            raise InvalidInputError("wavelength must be positive")
        object.__setattr__(self, "poses", poses)
        if not isinstance(self.template, SurfaceTemplate):
            tmpls = tuple(self.template)
            if len(tmpls) != len(poses) or len({t.n_antennas for t in tmpls}) != 1:
                raise InvalidInputError("per-surface templates must match poses and share N")
            object.__setattr__(self, "template", tmpls)

    @property
    def templates(self) -> tuple:
        if isinstance(self.template, SurfaceTemplate):
            return (self.template,) * len(self.poses)
        return self.template

    @property
    def n_surfaces(self) -> int:
        return len(self.poses)

    @property
    def n_antennas(self) -> int:
        return self.templates[0].n_antennas

    @property
    def dim(self) -> int:
        return self.n_surfaces * self.n_antennas

    @cached_property
    def rotations(self) -> np.ndarray:
        return rotation_matrix(np.array([p.rotation.as_array() for p in self.poses]))

    @cached_property
    def antenna_positions(self) -> np.ndarray:
        """Global antenna coordinates, shape ``(B, N, 3)``."""
        q = np.array([p.position for p in self.poses])
        local = np.array([t.local_positions for t in self.templates])
        return q[:, None, :] + np.einsum("bij,bnj->bni", self.rotations, local)

    def gains(self, doas) -> np.ndarray:
        """Per-surface gains, shape ``(B, L)``."""
        doas = np.atleast_2d(doas)
        tmpls = self.templates
        if isinstance(self.template, SurfaceTemplate):
            return gain_matrix(self.rotations, doas, self.pattern, self.template.local_normal)
        return np.concatenate(
            [gain_matrix(self.rotations[b:b + 1], doas, self.pattern, t.local_normal) for b, t in enumerate(tmpls)]
        )

    def with_poses(self, poses) -> "ArrayState":
        return ArrayState(tuple(poses), self.template, self.pattern, self.wavelength)


def steering_vector(pose: SurfacePose, doa, tmpl: SurfaceTemplate, wavelength: float) -> np.ndarray:
    """Entries ``exp(-j 2 pi / wavelength * f . r_n)`` for one surface, shape ``(N,)``."""
    R = rotation_matrix(pose.rotation)
    r = pose.position + tmpl.local_positions @ R.T
    return np.exp(-2j * np.pi / wavelength * (r @ np.asarray(doa, dtype=float)))


def weighted_steering(state: ArrayState, doas) -> np.ndarray:
    """Gain-weighted steering stack ``(BN, L)`` for arbitrary DoAs ``(L, 3)``."""
    doas = np.atleast_2d(np.asarray(doas, dtype=float))
    pos = state.antenna_positions.reshape(-1, 3)
    phase = np.exp(-2j * np.pi / state.wavelength * (pos @ doas.T))
    amp = np.repeat(np.sqrt(state.gains(doas)), state.n_antennas, axis=0)
    return amp * phase


def weighted_steering_matrix(state: ArrayState, paths: PathSet) -> np.ndarray:
    return weighted_steering(state, paths.doas)


def sci_matrix(state: ArrayState, paths: PathSet) -> np.ndarray:
    """Channel covariance ``A D A^H`` of one user, shape ``(BN, BN)``."""
    A = weighted_steering(state, paths.doas)
    return (A * paths.powers) @ A.conj().T


def sci_decomposition(state: ArrayState, paths: PathSet) -> np.ndarray:
    """Covariance rebuilt entrywise as ``sum_l p_l sqrt(g_i g_j) exp(j(phi_i - phi_j))``.

    ``g_i`` is the gain of the surface holding antenna ``i`` and ``phi_i`` the
    steering phase ``-2 pi f_l . r_i / wavelength``.  It separates the
    amplitude (rotation-driven) and phase (position-driven) contributions.
    """
    pos = state.antenna_positions.reshape(-1, 3)
    g = np.repeat(state.gains(paths.doas), state.n_antennas, axis=0)  # (BN, L)
    phi = -2.0 * np.pi / state.wavelength * (pos @ paths.doas.T)
    amp = np.sqrt(g[:, None, :] * g[None, :, :])
    rot = np.exp(1j * (phi[:, None, :] - phi[None, :, :]))
    return np.einsum("l,ijl->ij", paths.powers, amp * rot)


def draw_channel(state: ArrayState, paths: PathSet, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Random channel ``A v`` with ``v ~ CN(0, D)``; shape ``(BN,)`` or ``(size, BN)``."""
    A = weighted_steering(state, paths.doas)
    shape = (paths.n_paths,) if size is None else (size, paths.n_paths)
    v = np.sqrt(paths.powers / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return v @ A.T


def stack_paths(path_sets: Sequence[PathSet]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate users' paths; returns ``(doas, powers, owner)``."""
    doas = np.concatenate([p.doas for p in path_sets])
    powers = np.concatenate([p.powers for p in path_sets])
    owner = np.concatenate([np.full(p.n_paths, k) for k, p in enumerate(path_sets)])
    return doas, powers, owner
