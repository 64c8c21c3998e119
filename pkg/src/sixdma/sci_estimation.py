"""Training-pose design and multipath recovery from substage covariances.

The sparse-recovery problem stacks, over the ``S`` substages, the
vectorised sample covariances of a user::

    y = [vec(S_1); ...; vec(S_S)],   column i = [vec(a_1i a_1i^H); ...; vec(a_Si a_Si^H)]

where ``a_si`` is the gain-weighted steering vector of grid direction ``i``
at substage ``s``.  ``vec`` is column-major throughout.  Because every
column is a vectorised rank-one Hermitian block, its correlation with a
vectorised Hermitian observation is ``sum_s a_si^H R_s a_si``; the
:class:`CovarianceDictionary` uses that identity so the full
``B^2 N^2 S x I`` matrix never has to be materialised.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares, nnls

from .channel import ArrayState, PathSet, RadiationPattern, draw_channel, sci_matrix, weighted_steering
from .errors import InvalidInputError
from .geometry import SurfacePose, SurfaceTemplate, fibonacci_directions, rotation_with_normal

DEFAULT_GRID_SIZE = 10_000
DEFAULT_MAX_DICTIONARY_ENTRIES = 50_000_000
RESIDUAL_FALLBACK_TOL = 0.01
DEFAULT_REFINE_ROUNDS = 3
DEFAULT_SCREEN = 16
DEFAULT_BEAM = 4
OFF_GRID_RADIUS = 0.1  # rad, how far refinement may move a DoA off its grid atom
WHITENING_FLOOR = 1e-6  # relative to the largest diagonal entry


@dataclass(frozen=True)
class ArrayHardware:
    """Everything about the array except where the surfaces are."""

    template: SurfaceTemplate
    pattern: RadiationPattern
    wavelength: float

    def state(self, poses) -> ArrayState:
        return ArrayState(tuple(poses), self.template, self.pattern, self.wavelength)


@dataclass(frozen=True)
class TrainingPlan:
    poses: tuple
    n_surfaces: int
    snapshots: int

    @property
    def n_substages(self) -> int:
        return len(self.poses) // self.n_surfaces

    def substage(self, s: int) -> tuple:
        B = self.n_surfaces
        return self.poses[B * s:B * (s + 1)]


@dataclass(frozen=True)
class DoaGrid:
    directions: np.ndarray

    @classmethod
    def fibonacci(cls, size: int = DEFAULT_GRID_SIZE) -> "DoaGrid":
        return cls(fibonacci_directions(size))

    @property
    def size(self) -> int:
        return len(self.directions)


@dataclass(frozen=True)
class TrainingBudget:
    beamwidth: float
    omp_factor: float = 1.0
    max_paths: int = 1
    antennas_per_surface: int = 4

    def __post_init__(self):
        if not (0 < self.beamwidth <= np.pi):
            raise InvalidInputError(f"beamwidth must lie in (0, pi], got {self.beamwidth}")
        if self.omp_factor < 1:
            raise InvalidInputError("OMP factor must be >= 1")
        if self.max_paths < 1 or self.antennas_per_surface < 1:
            raise InvalidInputError("path and antenna counts must be positive")


GROUPINGS = ("interleaved", "contiguous")


def substage_order(M: int, B: int, grouping: str = "interleaved") -> list[int]:
    """Fibonacci indices in visiting order; substage ``s`` takes entries ``B s .. B s + B - 1``.

    ``contiguous`` visits indices in sequence, so each substage covers one
    latitude band.  ``interleaved`` gives substage ``s`` the indices
    ``s, s + S, s + 2S, ...`` so that every substage spans the whole sphere.
    """
    if grouping not in GROUPINGS:
        raise InvalidInputError(f"unknown substage grouping {grouping!r}; choose from {GROUPINGS}")
    if grouping == "contiguous":
        return list(range(M))
    S = M // B
    return [m for s in range(S) for m in range(s, M, S)]


def make_training_plan(M: int, B: int, T: int, radius: float, tmpl: SurfaceTemplate,
                       grouping: str = "interleaved") -> TrainingPlan:
    """Fibonacci training poses on a sphere of ``radius``, each facing outward."""
    if M < 1 or B < 1 or M % B:
        raise InvalidInputError(f"M={M} must be a positive multiple of B={B}")
    if T < 1:
        raise InvalidInputError("T must be positive")
    dirs = fibonacci_directions(M)[substage_order(M, B, grouping)]
    poses = tuple(SurfacePose(radius * d, rotation_with_normal(d, tmpl)) for d in dirs)
    return TrainingPlan(poses, B, T)


def simulate_substage_measurements(plan: TrainingPlan, path_sets: Sequence[PathSet], hw: ArrayHardware,
                                   rng_for=None, exact: bool = False) -> list[list[np.ndarray]]:
    """Per-user list of per-substage sample covariances.

    ``rng_for(k, s)`` returns the generator for user ``k`` at substage ``s``;
    with ``exact=True`` the true substage covariances are returned instead.
    """
    out = []
    for k, paths in enumerate(path_sets):
        covs = []
        for s in range(plan.n_substages):
            state = hw.state(plan.substage(s))
            if exact:
                covs.append(sci_matrix(state, paths))
                continue
            H = draw_channel(state, paths, rng_for(k, s), size=plan.snapshots)
            covs.append(H.T @ H.conj() / plan.snapshots)
        out.append(covs)
    return out


def stack_observation(covs: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(c).reshape(-1, order="F") for c in covs])


class CovarianceDictionary:
    """Implicit dictionary whose columns are stacked ``vec(a a^H)`` blocks."""

    def __init__(self, steering: Sequence[np.ndarray]):
        # steering[s] has shape (BN, I)
        self.steering = [np.asarray(a) for a in steering]
        self.dim = self.steering[0].shape[0]
        self.size = self.steering[0].shape[1]
        self.column_norms = np.sqrt(sum(np.sum(np.abs(a) ** 2, axis=0) ** 2 for a in self.steering))

    @classmethod
    def build(cls, plan: TrainingPlan, grid: DoaGrid, hw: ArrayHardware) -> "CovarianceDictionary":
        return cls([weighted_steering(hw.state(plan.substage(s)), grid.directions) for s in range(plan.n_substages)])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim ** 2 * len(self.steering), self.size)

    def reweighted(self, weights: Sequence[np.ndarray]) -> "CovarianceDictionary":
        """Dictionary of ``vec((w a)(w a)^H)`` columns, one weight vector per substage."""
        return CovarianceDictionary([np.asarray(w)[:, None] * A for w, A in zip(weights, self.steering)])

    def correlate(self, y: np.ndarray) -> np.ndarray:
        """``D^H y`` for every column."""
        n = self.dim
        out = np.zeros(self.size, dtype=complex)
        for s, A in enumerate(self.steering):
            R = y[s * n * n:(s + 1) * n * n].reshape(n, n, order="F")
            out += np.einsum("ij,ij->j", A.conj(), R @ A)
        return out

    def columns(self, idx) -> np.ndarray:
        idx = np.atleast_1d(idx)
        blocks = []
        for A in self.steering:
            a = A[:, idx]
            blocks.append((a[:, None, :] * a.conj()[None, :, :]).reshape(-1, len(idx), order="F"))
        return np.concatenate(blocks)

    def dense(self, max_entries: int = DEFAULT_MAX_DICTIONARY_ENTRIES) -> np.ndarray:
        rows, cols = self.shape
        if rows * cols > max_entries:
            raise MemoryError(
                f"dense dictionary would hold {rows}x{cols} entries (> {max_entries}); "
                "use the implicit CovarianceDictionary instead"
            )
        return self.columns(np.arange(cols))


def build_dictionary(plan: TrainingPlan, grid: DoaGrid, hw: ArrayHardware,
                     max_entries: int = DEFAULT_MAX_DICTIONARY_ENTRIES) -> np.ndarray:
    """Dense ``(B^2 N^2 S, I)`` dictionary; refuses to allocate past ``max_entries``."""
    B, N = plan.n_surfaces, hw.template.n_antennas
    rows = (B * N) ** 2 * plan.n_substages
    if rows * grid.size > max_entries:
        raise MemoryError(f"dictionary {rows}x{grid.size} exceeds the budget of {max_entries} entries")
    return CovarianceDictionary.build(plan, grid, hw).dense(max_entries)


@dataclass
class OmpResult:
    coefficients: np.ndarray
    support: list
    residual_norms: list


class _DenseDictionary:
    def __init__(self, D):
        self.D = np.asarray(D)
        self.shape = self.D.shape
        self.size = self.D.shape[1]
        self.column_norms = np.linalg.norm(self.D, axis=0)

    def correlate(self, y):
        return self.D.conj().T @ y

    def columns(self, idx):
        return self.D[:, np.atleast_1d(idx)]


def _nonneg_lstsq(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``argmin_{c >= 0} ||A c - y||`` for complex ``A, y`` and real ``c``."""
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    ynorm = np.linalg.norm(y)
    An = A / scale
    M = np.concatenate([An.real, An.imag])
    b = np.concatenate([y.real, y.imag]) / ynorm
    c, _ = nnls(M, b)
    return c * ynorm / scale


def non_negative_omp(y, dictionary, sparsity: int | None = None, tol: float = RESIDUAL_FALLBACK_TOL,
                     refine: int = DEFAULT_REFINE_ROUNDS, screen: int = DEFAULT_SCREEN,
                     beam: int = DEFAULT_BEAM) -> OmpResult:
    """Greedy non-negative sparse fit of ``y`` by dictionary columns.

    Each step shortlists the ``screen`` columns with the largest positive
    normalised correlation with the residual, refits every shortlisted
    extension by non-negative least squares and keeps the ``beam`` partial
    supports with the smallest residuals.  Stops after ``sparsity`` atoms,
    or, when ``sparsity`` is None, once the residual drops below
    ``tol * ||y||``.  Up to ``refine`` single-atom swap passes then revisit
    the winner.  ``screen=1, beam=1, refine=0`` is textbook OMP.
    """
    D = dictionary if hasattr(dictionary, "correlate") else _DenseDictionary(dictionary)
    y = np.asarray(y, dtype=complex)
    rows = D.shape[0]
    if y.shape != (rows,):
        raise InvalidInputError(f"observation length {y.shape} does not match dictionary rows {rows}")
    if sparsity is not None and not (1 <= sparsity <= D.size):
        raise InvalidInputError(f"sparsity must lie in [1, {D.size}], got {sparsity}")
    if screen < 1 or beam < 1 or refine < 0:
        raise InvalidInputError("screen and beam must be positive, refine non-negative")
    coef = np.zeros(D.size)
    y_norm = np.linalg.norm(y)
    if y_norm == 0:
        return OmpResult(coef, [], [0.0])
    norms = np.where(D.column_norms > 0, D.column_norms, np.inf)
    max_atoms = sparsity if sparsity is not None else D.size
    # each beam entry: (residual norm, support, coefficients, residual, history)
    frontier = [(float(y_norm), [], np.zeros(0), y, [float(y_norm)])]
    while len(frontier[0][1]) < max_atoms:
        grown = {}
        for _, sup, _, res, hist in frontier:
            for nr, trial, ct, rt in _extensions(y, D, norms, sup, res, screen):
                key = frozenset(trial)
                if key not in grown or nr < grown[key][0]:
                    grown[key] = (nr, trial, ct, rt, hist + [nr])
        if not grown:
            break
        frontier = sorted(grown.values(), key=lambda e: e[0])[:beam]
        if sparsity is None and frontier[0][0] <= tol * y_norm:
            break
    _, support, c, residual, res_norms = frontier[0]
    if refine and len(support) > 1:
        support, c, residual = _refine_support(y, D, norms, support, c, residual, refine, screen)
        res_norms = res_norms + [float(np.linalg.norm(residual))]
    coef[support] = c
    return OmpResult(coef, list(support), res_norms)


def _extensions(y, D, norms, support, residual, screen):
    """Refit ``support + [j]`` for the ``screen`` best-correlated atoms ``j``."""
    score = D.correlate(residual).real / norms
    score[support] = -np.inf
    cand = np.argsort(-score)[:screen]
    out = []
    for j in cand[score[cand] > 0]:
        trial = support + [int(j)]
        A = D.columns(trial)
        ct = _nonneg_lstsq(A, y)
        rt = y - A @ ct
        out.append((float(np.linalg.norm(rt)), trial, ct, rt))
    return out


def _best_extension(y, D, norms, support, residual, screen):
    ext = _extensions(y, D, norms, support, residual, screen)
    if not ext:
        return None
    return min(ext, key=lambda e: e[0])[1:]


def _refine_support(y, D, norms, support, c, residual, rounds, screen):
    """Swap single atoms while doing so strictly lowers the residual.

    Nearby paths can pull an early greedy pick onto an atom between them;
    re-selecting each atom against the residual of the others undoes that.
    """
    best = float(np.linalg.norm(residual))
    for _ in range(rounds):
        improved = False
        for pos in range(len(support)):
            rest = support[:pos] + support[pos + 1:]
            A_rest = D.columns(rest)
            r_rest = y - A_rest @ _nonneg_lstsq(A_rest, y)
            pick = _best_extension(y, D, norms, rest, r_rest, screen)
            if pick is None:
                continue
            trial, ct, rt = pick
            if np.linalg.norm(rt) < best * (1 - 1e-9):
                support = rest[:pos] + [trial[-1]] + rest[pos:]
                c = np.concatenate([ct[:pos], ct[-1:], ct[pos:-1]])
                residual, best = rt, float(np.linalg.norm(rt))
                improved = True
        if not improved:
            break
    return support, c, residual


def whitening_weights(covs: Sequence[np.ndarray], floor: float = WHITENING_FLOOR) -> list[np.ndarray]:
    """Per-substage ``w = diag(R)^(-1/2)``, so entry ``(i, j)`` is scaled by ``w_i w_j``.

    Sample-covariance entries have standard deviation close to
    ``sqrt(R_ii R_jj / T)``; scaling by ``w_i w_j`` evens out that noise so
    weak paths seen by surfaces facing them are not drowned by strong
    paths elsewhere.
    """
    diags = [np.real(np.diag(np.asarray(c))) for c in covs]
    top = max(float(d.max()) for d in diags)
    if not top > 0:
        return [np.ones_like(d) for d in diags]
    return [1.0 / np.sqrt(np.maximum(d, floor * top)) for d in diags]


def _whiten(covs: Sequence[np.ndarray], weights) -> list[np.ndarray]:
    return [np.outer(w, w) * np.asarray(c) for w, c in zip(weights, covs)]


def _observation_model(states, dirs: np.ndarray, weights=None) -> np.ndarray:
    """Stacked ``vec(a a^H)`` columns for arbitrary unit directions ``dirs``."""
    blocks = []
    for s, st in enumerate(states):
        a = weighted_steering(st, dirs)
        if weights is not None:
            a = weights[s][:, None] * a
        blocks.append((a[:, None, :] * a.conj()[None, :, :]).reshape(-1, dirs.shape[0], order="F"))
    return np.concatenate(blocks)


def _tangent_frames(dirs: np.ndarray) -> np.ndarray:
    helper = np.where(np.abs(dirs[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.cross(dirs, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return np.stack([e1, np.cross(dirs, e1)], axis=1)


def refine_off_grid(y: np.ndarray, paths: PathSet, plan: TrainingPlan, hw: ArrayHardware,
                    radius: float = OFF_GRID_RADIUS, weights=None) -> PathSet:
    """Jointly polish DoAs and powers of a grid estimate by bounded least squares.

    Each DoA moves within ``radius`` (tangent-plane coordinates) of its
    starting atom; powers stay non-negative.  The refined estimate is kept
    only if it lowers the residual.  ``y`` must already carry ``weights``
    (see :func:`whitening_weights`) if any are given.
    """
    y = np.asarray(y, dtype=complex)
    y_norm = np.linalg.norm(y)
    if y_norm == 0:
        return paths
    states = [hw.state(plan.substage(s)) for s in range(plan.n_substages)]
    d0 = paths.doas
    frames = _tangent_frames(d0)
    L = d0.shape[0]
    scale = max(float(paths.powers.max()), y_norm * 1e-12)

    def unpack(x):
        t = x[:2 * L].reshape(L, 2)
        d = d0 + np.einsum("lk,lkj->lj", t, frames)
        return d / np.linalg.norm(d, axis=1, keepdims=True), x[2 * L:] * scale

    def resid(x):
        d, p = unpack(x)
        r = (y - _observation_model(states, d, weights) @ p) / y_norm
        return np.concatenate([r.real, r.imag])

    x0 = np.concatenate([np.zeros(2 * L), paths.powers / scale])
    r0 = np.linalg.norm(resid(x0))
    if r0 <= 1e-12:
        return paths
    lo = np.concatenate([np.full(2 * L, -radius), np.zeros(L)])
    hi = np.concatenate([np.full(2 * L, radius), np.full(L, np.inf)])
    sol = least_squares(resid, np.clip(x0, lo, hi), bounds=(lo, hi), method="trf", x_scale="jac")
    if not np.linalg.norm(sol.fun) < r0:
        return paths
    d, p = unpack(sol.x)
    return PathSet(d, np.maximum(p, 0.0))


def estimate_mpc(covs: Sequence[np.ndarray], plan: TrainingPlan, grid: DoaGrid, hw: ArrayHardware,
                 n_paths: int | None, dictionary: CovarianceDictionary | None = None,
                 off_grid: bool = True, whiten: bool = True) -> PathSet:
    """Recover one user's DoAs and path powers from its substage covariances.

    Non-negative OMP on the grid dictionary gives the support; with
    ``off_grid`` the result is then polished by :func:`refine_off_grid`.
    ``whiten`` fits entry-normalised covariances (:func:`whitening_weights`).
    """
    if n_paths is not None and n_paths < 1:
        raise InvalidInputError("number of paths must be positive")
    if len(covs) != plan.n_substages:
        raise InvalidInputError("one covariance per substage is required")
    D = dictionary if dictionary is not None else CovarianceDictionary.build(plan, grid, hw)
    weights = None
    if whiten:
        weights = whitening_weights(covs)
        D = D.reweighted(weights)
        covs = _whiten(covs, weights)
    y = stack_observation(covs)
    result = non_negative_omp(y, D, sparsity=n_paths)
    idx = [i for i in result.support if result.coefficients[i] > 0]
    if not idx:
        # nothing resolvable: keep the best single atom with a vanishing power
        idx = result.support[:1] or [0]
    est = PathSet(grid.directions[idx], result.coefficients[idx])
    return refine_off_grid(y, est, plan, hw, weights=weights) if off_grid else est


def cone_cover_count(beamwidth: float) -> int:
    """Cap-area bound on the number of cones of apex angle ``beamwidth`` covering the sphere."""
    x = 2.0 / (1.0 - np.cos(beamwidth / 2.0))
    return int(np.ceil(x - 1e-9))


def min_training_pairs(budget: TrainingBudget) -> int:
    beta = cone_cover_count(budget.beamwidth)
    x = budget.omp_factor * beta * budget.max_paths / budget.antennas_per_surface
    return int(np.ceil(x - 1e-9))
