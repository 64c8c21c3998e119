"""Rotation optimisation on the inscribed sphere.

Every surface sits at ``d_ins * n(u_b)``, so the array is a function of
the stacked Euler angles ``u`` alone.  The objective is the sum of natural
logs of the closed-form Jensen surrogate rates.  A greedy pass over
Fibonacci-spaced candidate normals gives the starting point, then gradient
ascent with forward-difference gradients and Armijo backtracking refines it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import PathSet, stack_paths, weighted_steering
from .errors import ConfigError, InvalidInputError
from .geometry import EulerRotation, SurfacePose, fibonacci_directions, rotation_with_normal, surface_normal
from .rate import LinkBudget, jensen_lower_surrogate, sum_log_rate
from .sci_estimation import ArrayHardware


@dataclass(frozen=True)
class RotationOptConfig:
    candidate_count: int = 512
    max_iterations: int = 20
    fd_step: float = 2.0 ** -16
    armijo_init: float = 1.0
    armijo_shrink: float = 0.5
    armijo_max: int = 30
    inscribed_radius: float = 0.5
    min_improvement: float = 1e-9

    def __post_init__(self):
        if not self.fd_step > 0:
            raise ConfigError("finite-difference step must be positive")
        if not 0 < self.armijo_shrink < 1:
            raise ConfigError("Armijo shrink factor must lie in (0, 1)")
        if not self.armijo_init > 0:
            raise ConfigError("initial step must be positive")
        if self.max_iterations < 0 or self.armijo_max < 0:
            raise ConfigError("iteration caps must be non-negative")
        if self.candidate_count < 1:
            raise ConfigError("need at least one greedy candidate")
        if not self.inscribed_radius > 0:
            raise ConfigError("inscribed radius must be positive")


@dataclass(frozen=True)
class RotationContext:
    """What the objective needs: users' multipath, hardware and link budget."""

    path_sets: tuple
    hardware: ArrayHardware
    budget: LinkBudget
    n_surfaces: int

    def __post_init__(self):
        object.__setattr__(self, "path_sets", tuple(self.path_sets))
        if len(self.path_sets) != self.budget.n_users:
            raise InvalidInputError("one path set per user is required")
        if self.n_surfaces < 1:
            raise InvalidInputError("need at least one surface")


@dataclass
class RotationResult:
    u: np.ndarray
    trace: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    initial: np.ndarray | None = None

    @property
    def rotations(self) -> list[EulerRotation]:
        return [EulerRotation.from_array(r) for r in self.u.reshape(-1, 3)]


def pose_from_rotation(u_b, cfg: RotationOptConfig, hardware: ArrayHardware) -> SurfacePose:
    """Pose whose position is the surface normal scaled by the inscribed radius."""
    rot = u_b if isinstance(u_b, EulerRotation) else EulerRotation.from_array(u_b)
    return SurfacePose(cfg.inscribed_radius * surface_normal(rot, hardware.template), rot)


def poses_from_vector(u, cfg: RotationOptConfig, hardware: ArrayHardware) -> tuple:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size % 3:
        raise InvalidInputError(f"rotation vector length must be a multiple of 3, got {u.shape}")
    return tuple(pose_from_rotation(r, cfg, hardware) for r in u.reshape(-1, 3))


def _objective_from_steering(A: np.ndarray, powers: np.ndarray, owner: np.ndarray, budget: LinkBudget) -> float:
    scis = []
    for k in range(budget.n_users):
        Ak = A[:, owner == k]
        scis.append((Ak * powers[owner == k]) @ Ak.conj().T)
    return sum_log_rate(jensen_lower_surrogate(scis, budget))


def objective(u, ctx: RotationContext, cfg: RotationOptConfig) -> float:
    """Sum log-rate of the Jensen surrogate for the array described by ``u``."""
    state = ctx.hardware.state(poses_from_vector(u, cfg, ctx.hardware))
    doas, powers, owner = stack_paths(ctx.path_sets)
    return _objective_from_steering(weighted_steering(state, doas), powers, owner, ctx.budget)


def numerical_gradient(u, ctx: RotationContext, cfg: RotationOptConfig, f0: float | None = None) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    eps = cfg.fd_step
    if not eps > 0:
        raise InvalidInputError("finite-difference step must be positive")
    if f0 is None:
        f0 = objective(u, ctx, cfg)
    g = np.empty_like(u)
    for i in range(u.size):
        probe = u.copy()
        probe[i] += eps
        g[i] = (objective(probe, ctx, cfg) - f0) / eps
    return g


def candidate_rotations(count: int, hardware: ArrayHardware) -> np.ndarray:
    """Euler angles of ``count`` rotations facing Fibonacci directions, shape ``(count, 3)``."""
    return np.array([rotation_with_normal(d, hardware.template).as_array() for d in fibonacci_directions(count)])


def greedy_init(ctx: RotationContext, cfg: RotationOptConfig) -> np.ndarray:
    """Pick each surface's rotation in turn from the candidate set.

    Surface ``b`` takes the candidate maximising the objective of the
    partial array of surfaces ``1..b``; ties go to the lowest index.
    Candidates may be reused.
    """
    cands = candidate_rotations(cfg.candidate_count, ctx.hardware)
    cand_poses = [pose_from_rotation(c, cfg, ctx.hardware) for c in cands]
    doas, powers, owner = stack_paths(ctx.path_sets)
    # per-candidate gain-weighted steering block, (N, L_total)
    blocks = [weighted_steering(ctx.hardware.state([p]), doas) for p in cand_poses]
    chosen: list[int] = []
    stack = np.zeros((0, doas.shape[0]), dtype=complex)
    for _ in range(ctx.n_surfaces):
        best_val, best_m = -np.inf, None
        for m, blk in enumerate(blocks):
            try:
                val = _objective_from_steering(np.vstack([stack, blk]), powers, owner, ctx.budget)
            except InvalidInputError:
                continue
            if val > best_val:
                best_val, best_m = val, m
        if best_m is None:
            raise InvalidInputError("no candidate rotation gives a finite objective")
        chosen.append(best_m)
        stack = np.vstack([stack, blocks[best_m]])
    return cands[chosen].reshape(-1)


def optimize_rotations(ctx: RotationContext, cfg: RotationOptConfig, u0=None) -> RotationResult:
    """Armijo gradient ascent from the greedy start (or ``u0``).

    A trial ``u + tau g`` is accepted at the first ``tau = tau_ini delta^nu``
    with ``f(u + tau g) - f(u) > tau g.(u_new - u)``; the loop stops after
    ``max_iterations`` steps, when no ``nu <= armijo_max`` qualifies, or when
    the accepted gain falls below ``min_improvement``.
    """
    u = greedy_init(ctx, cfg) if u0 is None else np.asarray(u0, dtype=float).copy()
    if u.size != 3 * ctx.n_surfaces:
        raise InvalidInputError("initial rotation vector has the wrong length")
    f = objective(u, ctx, cfg)
    result = RotationResult(u.copy(), [f], [], u.copy())
    for _ in range(cfg.max_iterations):
        g = numerical_gradient(u, ctx, cfg, f)
        if not np.any(g):
            break
        accepted = None
        tau = cfg.armijo_init
        for _nu in range(cfg.armijo_max + 1):
            trial = u + tau * g
            try:
                ft = objective(trial, ctx, cfg)
            except InvalidInputError:
                ft = -np.inf
            if ft - f > tau * float(g @ (trial - u)):
                accepted = (trial, ft, tau)
                break
            tau *= cfg.armijo_shrink
        if accepted is None:
            break
        trial, ft, tau = accepted
        gain = ft - f
        u, f = trial, ft
        result.trace.append(f)
        result.step_sizes.append(tau)
        if gain < cfg.min_improvement:
            break
    # report angles in their canonical range
    result.u = np.concatenate([EulerRotation.from_array(r).as_array() for r in u.reshape(-1, 3)])
    return result


def rotation_sensitivity_ratio(state, paths: PathSet, rng: np.random.Generator, angle: float = 1e-2,
                               trials: int = 50, arm: float | None = None) -> float:
    """Median ratio of the change in ``||Sigma||_F`` under rotation to that under translation.

    A random surface is rotated by ``angle`` about a random axis through its
    centre, or translated by ``arm * angle`` in a random direction, where
    ``arm`` defaults to the surface's distance from the origin.
    """
    from .channel import sci_matrix
    from .geometry import _axis_angle_matrix, euler_from_matrix

    base = np.linalg.norm(sci_matrix(state, paths))
    ratios = []
    for _ in range(trials):
        b = int(rng.integers(state.n_surfaces))
        pose = state.poses[b]
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        R = _axis_angle_matrix(axis, angle) @ pose.rotation.matrix
        rotated = list(state.poses)
        rotated[b] = SurfacePose(pose.position, euler_from_matrix(R))
        shift = rng.standard_normal(3)
        shift /= np.linalg.norm(shift)
        length = (np.linalg.norm(pose.position) if arm is None else arm) * angle
        moved = list(state.poses)
        moved[b] = SurfacePose(pose.position + length * shift, pose.rotation)
        d_rot = abs(np.linalg.norm(sci_matrix(state.with_poses(rotated), paths)) - base)
        d_pos = abs(np.linalg.norm(sci_matrix(state.with_poses(moved), paths)) - base)
        ratios.append(d_rot / max(d_pos, np.finfo(float).tiny))
    return float(np.median(ratios))
