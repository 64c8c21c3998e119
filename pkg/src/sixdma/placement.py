"""Collision-free positions for surfaces with fixed orientations.

Surfaces are enclosed by circular extended regions (CERs): discs of
radius ``d/2`` around their centres, in their own planes.  The pairwise
requirement is that every CER lies behind every other surface's plane.
Surfaces are added one at a time on a plane tangent to the CERs already
placed; when the natural spot next to the tangent point is blocked, the
placed surfaces are pushed apart within that plane to make room.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InvalidInputError, InvariantViolation, PlacementError
from .geometry import (
    CONTAINMENT_TOL,
    CircularRegion,
    Halfspace,
    SurfacePose,
    SurfaceTemplate,
    halfspace_contains_region,
    surface_polygon,
)

DEGENERATE_TOL = 1e-9
SNAP_ANGLE = 1e-6
CIRCLE_SAMPLES = 64
RING_DIRECTIONS = 12


@dataclass
class PlacementState:
    normals: np.ndarray
    cer_radius: float
    placed: list = field(default_factory=list)
    pending: list = field(default_factory=list)
    positions: dict = field(default_factory=dict)

    def __post_init__(self):
        n = np.atleast_2d(np.asarray(self.normals, dtype=float))
        if n.ndim != 2 or n.shape[1] != 3 or len(n) == 0:
            raise InvalidInputError("normals must be a non-empty (B, 3) array")
        if np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-9:
            raise InvalidInputError("every normal must be a unit vector")
        if not self.cer_radius > 0:
            raise InvalidInputError("CER radius must be positive")
        self.normals = n
        if not self.placed and not self.pending:
            self.pending = list(range(len(n)))
        if set(self.placed) & set(self.pending) or set(self.placed) | set(self.pending) != set(range(len(n))):
            raise InvalidInputError("placed and pending must partition the surface indices")

    @property
    def diameter(self) -> float:
        return 2.0 * self.cer_radius

    def cer(self, b: int) -> CircularRegion:
        return CircularRegion(self.positions[b], self.normals[b], self.cer_radius)

    def halfspace(self, b: int) -> Halfspace:
        return Halfspace(self.normals[b], self.positions[b])

    def place_first(self, b: int = 0, position=(0.0, 0.0, 0.0)) -> None:
        if self.placed:
            raise InvalidInputError("the first surface is already placed")
        self.pending.remove(b)
        self.placed.append(b)
        self.positions[b] = np.asarray(position, dtype=float).copy()


def select_next_surface(state: PlacementState) -> int:
    """Pending surface whose normal best matches some placed normal (lowest index on ties)."""
    if not state.placed:
        raise InvalidInputError("no surface placed yet; place the first one unconditionally")
    if not state.pending:
        raise InvalidInputError("nothing left to place")
    pending = sorted(state.pending)
    align = state.normals[pending] @ state.normals[state.placed].T
    return pending[int(np.argmax(align.max(axis=1)))]


def _projected(n: np.ndarray, plane_normal: np.ndarray) -> np.ndarray:
    return n - (n @ plane_normal) * plane_normal


def tangent_hyperplane(state: PlacementState, b_new: int) -> tuple[Halfspace, int, np.ndarray]:
    """Plane with the new surface's normal, tangent to the frontmost placed CER.

    Returns the plane as a halfspace anchored at the tangent point, the
    index of the tangent CER and the tangent point.  Among CERs that tie for
    the support value, one whose disc is not parallel to the plane is
    preferred, then the lowest index.
    """
    if not state.placed:
        raise InvalidInputError("no placed surfaces to be tangent to")
    n = state.normals[b_new]
    supports = {b: state.cer(b).support(n) for b in state.placed}
    chi = max(supports.values())
    scale = max(1.0, abs(chi))
    ties = sorted(b for b, s in supports.items() if s >= chi - 1e-12 * scale)

    def degenerate(b):
        return np.linalg.norm(_projected(n, state.normals[b])) < DEGENERATE_TOL

    ranked = sorted(ties, key=lambda b: (degenerate(b), b))
    b_tan = ranked[0]
    x_tan = state.cer(b_tan).support_point(n)
    return Halfspace(n, x_tan), b_tan, x_tan


def initial_guess_position(x_tan, b_tan: int, b_new: int, state: PlacementState) -> np.ndarray | None:
    """``x_tan`` stepped back by ``d/2`` along the tangent surface's in-plane normal.

    Returns None when that normal has no component in the plane.
    """
    proj = _projected(state.normals[b_tan], state.normals[b_new])
    norm = np.linalg.norm(proj)
    if norm < DEGENERATE_TOL:
        return None
    return np.asarray(x_tan, dtype=float) - state.cer_radius * proj / norm


def _parallel(state: PlacementState, a: int, b: int) -> bool:
    return float(state.normals[a] @ state.normals[b]) > 1.0 - DEGENERATE_TOL


def _coplanar_clear(state: PlacementState, b_new: int, center, others) -> bool:
    """Same-facing, coplanar CERs must not overlap (centres at least ``d`` apart)."""
    n = state.normals[b_new]
    d = state.diameter
    for b in others:
        if not _parallel(state, b, b_new):
            continue
        q = state.positions[b]
        if abs(n @ (center - q)) <= CONTAINMENT_TOL and np.linalg.norm(center - q) < d - CONTAINMENT_TOL:
            return False
    return True


def pair_ok(state: PlacementState, a: int, b: int, tol: float = CONTAINMENT_TOL) -> bool:
    """CER containment both ways, plus no overlap of same-facing coplanar discs."""
    if not (halfspace_contains_region(state.halfspace(a), state.cer(b), tol)
            and halfspace_contains_region(state.halfspace(b), state.cer(a), tol)):
        return False
    return _coplanar_clear(state, a, state.positions[a], [b])


def _fits_behind_all(state: PlacementState, b_new: int, center) -> bool:
    disc = CircularRegion(center, state.normals[b_new], state.cer_radius)
    return (all(halfspace_contains_region(state.halfspace(b), disc) for b in state.placed)
            and _coplanar_clear(state, b_new, center, state.placed))


def _in_plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = _projected(helper, n)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def _free_slot(state: PlacementState, b_new: int, x_tan) -> np.ndarray | None:
    """Most compact spot on the plane near ``x_tan`` that needs no shifting.

    Candidates are ``x_tan`` itself and rings of radius ``d`` around it and
    around every same-facing surface lying on the plane; among those that
    fit, the one closest to the farthest placed centre wins.
    """
    n = state.normals[b_new]
    e1, e2 = _in_plane_basis(n)
    angles = np.arange(RING_DIRECTIONS) * (2 * np.pi / RING_DIRECTIONS)
    ring = state.diameter * (np.cos(angles)[:, None] * e1 + np.sin(angles)[:, None] * e2)
    x_tan = np.asarray(x_tan, dtype=float)
    anchors = [x_tan] + [state.positions[b] for b in sorted(state.placed)
                         if _parallel(state, b, b_new) and abs(n @ (state.positions[b] - x_tan)) <= CONTAINMENT_TOL]
    cands = [x_tan] + [c for a in anchors for c in a + ring]
    centres = np.array([state.positions[b] for b in state.placed])
    best, best_spread = None, np.inf
    for c in cands:
        if not _fits_behind_all(state, b_new, c):
            continue
        spread = float(np.max(np.linalg.norm(centres - c, axis=1)))
        if spread < best_spread - 1e-12:
            best, best_spread = c, spread
    return best


def place_surface(state: PlacementState, b_new: int) -> dict:
    """Position ``b_new`` next to the placed surfaces and verify every placed pair.

    Returns a record of the branch taken.
    """
    if b_new not in state.pending:
        raise InvalidInputError(f"surface {b_new} is not pending")
    _, b_tan, x_tan = tangent_hyperplane(state, b_new)
    q_ini = initial_guess_position(x_tan, b_tan, b_new, state)
    n = state.normals[b_new]
    slot = None
    if q_ini is None:
        slot = _free_slot(state, b_new, x_tan)
    if q_ini is not None and _fits_behind_all(state, b_new, q_ini):
        branch, q_new, shift = "initial", q_ini, 0.0
    elif slot is not None:
        branch, q_new, shift = "slot", slot, 0.0
    else:
        # Make room at x_tan: tilted surfaces move along their in-plane normals,
        # same-facing coplanar ones move radially away from x_tan.
        shift = state.cer_radius if q_ini is not None else state.diameter
        fixed_axis, _ = _in_plane_basis(n)
        for b in state.placed:
            proj = _projected(state.normals[b], n)
            norm = np.linalg.norm(proj)
            if norm >= DEGENERATE_TOL:
                state.positions[b] = state.positions[b] + shift * proj / norm
            elif _parallel(state, b, b_new) and abs(n @ (state.positions[b] - x_tan)) <= CONTAINMENT_TOL:
                v = state.positions[b] - x_tan
                dist = np.linalg.norm(v)
                away = v / dist if dist > CONTAINMENT_TOL else fixed_axis
                state.positions[b] = state.positions[b] + shift * away
        branch = "shift" if q_ini is not None else "degenerate"
        q_new = np.asarray(x_tan, dtype=float)
    state.pending.remove(b_new)
    state.placed.append(b_new)
    state.positions[b_new] = np.asarray(q_new, dtype=float)
    for a, b in combinations(state.placed, 2):
        if not pair_ok(state, a, b):
            raise InvariantViolation(f"surfaces {a} and {b} violate the CER halfspace constraint after placing {b_new}")
    return {"surface": b_new, "tangent": b_tan, "branch": branch, "shift": shift}


def _circle_points(center, normal, radius, k: int = CIRCLE_SAMPLES) -> np.ndarray:
    e1, e2 = _in_plane_basis(np.asarray(normal, dtype=float))
    t = np.linspace(0.0, 2 * np.pi, k, endpoint=False)
    return center + radius * (np.cos(t)[:, None] * e1 + np.sin(t)[:, None] * e2)


def _cer_diameter(state: PlacementState, members) -> float:
    pts = np.concatenate([_circle_points(state.positions[b], state.normals[b], state.cer_radius) for b in members])
    if len(pts) < 2:
        return 0.0
    from scipy.spatial.distance import pdist
    return float(pdist(pts).max())


@dataclass
class PlacementReport:
    positions: np.ndarray
    normals: np.ndarray
    cer_radius: float
    order: list
    branches: list
    cer_pairs_ok: bool
    polygon_pairs_ok: bool | None
    diameter_growth: list
    growth_ok: bool
    bounding_edge: float
    bound: float
    bound_ok: bool
    offset: np.ndarray
    rotations: list | None = None
    snapped: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.cer_pairs_ok and self.polygon_pairs_ok is not False and self.bound_ok


def polygon_pairs_ok(poses, template: SurfaceTemplate, tol: float = CONTAINMENT_TOL) -> bool:
    """Every surface polygon lies behind every other surface's plane."""
    from .geometry import halfspace_of

    polys = [surface_polygon(p, template) for p in poses]
    for a, b in combinations(range(len(poses)), 2):
        if not (halfspace_contains_region(halfspace_of(poses[a], template), polys[b], tol)
                and halfspace_contains_region(halfspace_of(poses[b], template), polys[a], tol)):
            return False
    return True


def _extent_points(positions, normals, radius, poses, template) -> np.ndarray:
    if template is not None and template.local_region is not None and poses is not None:
        return np.concatenate([surface_polygon(p, template) for p in poses])
    return np.concatenate([_circle_points(q, n, radius) for q, n in zip(positions, normals)])


def snap_parallel(normals, rotations=None, angle: float = SNAP_ANGLE):
    """Make normals within ``angle`` of an earlier one exact copies of it.

    Nearly parallel surfaces make the tangent construction ill-conditioned;
    copying the earlier surface's normal (and rotation) removes that at a
    negligible change in orientation.  Returns ``(normals, rotations, snapped)``.
    """
    n = np.array(normals, dtype=float)
    rots = None if rotations is None else list(rotations)
    cos_tol = np.cos(angle)
    snapped = []
    for b in range(1, len(n)):
        for a in range(b):
            if float(n[a] @ n[b]) >= cos_tol and np.any(n[a] != n[b]):
                n[b] = n[a]
                if rots is not None:
                    rots[b] = rots[a]
                snapped.append((b, a))
                break
    return n, rots, snapped


def place_all(normals, cer_radius: float, rotations=None, template: SurfaceTemplate | None = None,
              region_edge: float | None = None) -> PlacementReport:
    """Place every surface and check the result.

    With ``rotations`` and ``template`` the report also checks the actual
    surface polygons and measures the bounding box on them; otherwise the
    CER discs stand in for the surfaces.  With ``region_edge`` the assembly
    is translated so its bounding box is centred on the origin, and a
    :class:`PlacementError` is raised if some centre leaves the cube of that
    edge.
    """
    if rotations is not None and len(rotations) != len(np.atleast_2d(normals)):
        raise InvalidInputError("one rotation per normal is required")
    normals, rotations, snapped = snap_parallel(normals, rotations)
    state = PlacementState(normals, cer_radius)
    B = len(state.normals)
    state.place_first(0)
    order, branches = [0], ["first"]
    growth = []
    sample_err = 2.0 * cer_radius * (1.0 - np.cos(np.pi / CIRCLE_SAMPLES))
    diam = _cer_diameter(state, state.placed)
    while state.pending:
        b = select_next_surface(state)
        rec = place_surface(state, b)
        order.append(b)
        branches.append(rec["branch"])
        new_diam = _cer_diameter(state, state.placed)
        growth.append(new_diam - diam)
        diam = new_diam
    positions = np.array([state.positions[b] for b in range(B)])
    poses = None
    if rotations is not None:
        poses = [SurfacePose(q, r) for q, r in zip(positions, rotations)]
    pts = _extent_points(positions, state.normals, cer_radius, poses, template)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    edge = float(np.max(hi - lo))
    offset = np.zeros(3)
    if region_edge is not None:
        offset = -(lo + hi) / 2.0
        positions = positions + offset
        if np.any(np.abs(positions) > region_edge / 2.0 + CONTAINMENT_TOL):
            raise PlacementError(f"placed surfaces do not fit in a cube of edge {region_edge} m")
        if poses is not None:
            poses = [SurfacePose(q, r) for q, r in zip(positions, rotations)]
    cer_ok = all(pair_ok(state, a, b) for a, b in combinations(range(B), 2))
    poly_ok = None
    if poses is not None and template is not None and template.local_region is not None:
        normals_from_rot = np.array([p.rotation.matrix @ template.local_normal for p in poses])
        if np.max(np.abs(normals_from_rot - state.normals)) > 1e-9:
            raise InvalidInputError("rotations and normals disagree")
        poly_ok = polygon_pairs_ok(poses, template)
    bound = B * state.diameter
    return PlacementReport(
        positions=positions,
        normals=state.normals.copy(),
        cer_radius=float(cer_radius),
        order=order,
        branches=branches,
        cer_pairs_ok=cer_ok,
        polygon_pairs_ok=poly_ok,
        diameter_growth=growth,
        growth_ok=all(g <= state.diameter + sample_err + 1e-12 for g in growth),
        bounding_edge=edge,
        bound=bound,
        bound_ok=edge <= bound + CONTAINMENT_TOL,
        offset=offset,
        rotations=rotations,
        snapped=snapped,
    )
