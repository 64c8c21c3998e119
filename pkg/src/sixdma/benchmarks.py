"""Comparison schemes: fixed three-sector array, PSO-tuned sector layouts,
and a Monte Carlo alternating optimiser over full 6-D poses."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayState, RadiationPattern, sci_matrix, stack_paths, weighted_steering
from .errors import ConfigError, InvalidInputError, PlacementError
from .geometry import EulerRotation, SurfacePose, SurfaceTemplate, rotation_with_normal, surface_normal
from .placement import place_all, polygon_pairs_ok
from .rate import LinkBudget, monte_carlo_rate, sum_log_rate
from .sci_estimation import ArrayHardware

SECTOR_AZIMUTHS_DEG = (90.0, 210.0, 330.0)
PANEL_EDGE = 0.5
INFEASIBLE_FITNESS = -1e9
SCORING_KEY = (2 ** 31 - 1, 0)  # draw shared by every start, independent of init_count


# --------------------------------------------------------------------------- sectors

@dataclass(frozen=True)
class SectorArray:
    """Three vertical sector panels facing fixed azimuths.

    Each panel holds ``antennas_per_sector`` elements on a half-wavelength
    grid (``rows x cols`` minus trailing slots) centred on the panel.
    """

    wavelength: float = 0.125
    antennas_per_sector: int = 11
    rows: int = 3
    cols: int = 4
    panel_edge: float = PANEL_EDGE
    azimuths_deg: tuple = SECTOR_AZIMUTHS_DEG
    pattern: RadiationPattern = field(default_factory=RadiationPattern)

    def __post_init__(self):
        if self.antennas_per_sector < 1 or self.antennas_per_sector > self.rows * self.cols:
            raise ConfigError("antennas per sector must fit the grid")
        if (max(self.rows, self.cols) - 1) * self.wavelength / 2 > self.panel_edge:
            raise ConfigError("grid does not fit on the panel")

    @property
    def spacing(self) -> float:
        return self.wavelength / 2.0

    @property
    def apothem(self) -> float:
        """Distance from the array centre to each panel so neighbouring panels meet."""
        n = len(self.azimuths_deg)
        return self.panel_edge / (2.0 * np.tan(np.pi / n))

    def grid_offsets(self) -> np.ndarray:
        """In-panel (horizontal, vertical) offsets of the fixed layout, shape ``(A, 2)``."""
        s = self.spacing
        ys = (np.arange(self.cols) - (self.cols - 1) / 2.0) * s
        zs = (np.arange(self.rows) - (self.rows - 1) / 2.0) * s
        pts = np.array([(y, z) for z in zs for y in ys])
        return pts[: self.antennas_per_sector]

    def normals(self) -> np.ndarray:
        az = np.deg2rad(np.asarray(self.azimuths_deg, dtype=float))
        return np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=1)

    def template(self, offsets) -> SurfaceTemplate:
        offsets = np.asarray(offsets, dtype=float)
        local = np.column_stack([np.zeros(len(offsets)), offsets])
        h = self.panel_edge / 2.0
        region = np.array([[0.0, -h, -h], [0.0, h, -h], [0.0, h, h], [0.0, -h, h]])
        return SurfaceTemplate(local, np.array([1.0, 0.0, 0.0]), region, np.sqrt(2.0) * self.panel_edge)

    def state(self, offsets=None) -> ArrayState:
        """Array state; ``offsets`` is ``(sectors, A, 2)`` or None for the fixed grid."""
        S = len(self.azimuths_deg)
        if offsets is None:
            offsets = np.broadcast_to(self.grid_offsets(), (S,) + self.grid_offsets().shape)
        offsets = np.asarray(offsets, dtype=float)
        tmpls = tuple(self.template(o) for o in offsets)
        poses = []
        for n in self.normals():
            rot = rotation_with_normal(n, tmpls[0])
            poses.append(SurfacePose(self.apothem * n, rot))
        return ArrayState(tuple(poses), tmpls, self.pattern, self.wavelength)


def fixed_sector_state(sectors: SectorArray | None = None) -> ArrayState:
    return (sectors or SectorArray()).state()


def spacing_violation(offsets, min_spacing: float) -> float:
    """Total shortfall below ``min_spacing`` over all same-panel antenna pairs."""
    offsets = np.asarray(offsets, dtype=float)
    total = 0.0
    for panel in offsets.reshape(-1, offsets.shape[-2], 2):
        diff = panel[:, None, :] - panel[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        iu = np.triu_indices(len(panel), 1)
        total += float(np.sum(np.maximum(min_spacing - dist[iu], 0.0)))
    return total


# --------------------------------------------------------------------------- instantaneous rates

@dataclass(frozen=True)
class InstantaneousDraws:
    """Fixed path gains ``v`` per user and realisation, shape ``(R, L_k)`` each."""

    path_sets: tuple
    gains: tuple

    @classmethod
    def draw(cls, path_sets, rng: np.random.Generator, realisations: int = 1) -> "InstantaneousDraws":
        gains = []
        for ps in path_sets:
            shape = (realisations, ps.n_paths)
            gains.append(np.sqrt(ps.powers / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))
        return cls(tuple(path_sets), tuple(gains))


def instantaneous_rates(state: ArrayState, draws: InstantaneousDraws, budget: LinkBudget) -> np.ndarray:
    """Per-user MMSE rate averaged over the fixed realisations."""
    doas, _, owner = stack_paths(draws.path_sets)
    A = weighted_steering(state, doas)
    R = draws.gains[0].shape[0]
    K = len(draws.path_sets)
    n = A.shape[0]
    H = np.empty((R, n, K), dtype=complex)
    for k in range(K):
        H[:, :, k] = draws.gains[k] @ A[:, owner == k].T
    G = H * np.sqrt(budget.powers / budget.noise_power)
    M = np.einsum("rik,rjk->rij", G, G.conj()) + np.eye(n)
    x = np.einsum("rik,rik->rk", G.conj(), np.linalg.solve(M, G)).real
    return (-np.log1p(-np.clip(x, 0.0, 1.0 - 1e-16)) / np.log(2.0)).mean(axis=0)


# --------------------------------------------------------------------------- PSO

@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 30
    iterations: int = 50
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    velocity_clamp: float = 0.2

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ConfigError("swarm needs at least two particles")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if min(self.inertia, self.cognitive, self.social) < 0 or not self.velocity_clamp > 0:
            raise ConfigError("PSO weights must be non-negative and the clamp positive")


@dataclass
class PsoResult:
    offsets: np.ndarray
    fitness: float
    rates: np.ndarray
    trace: list
    feasible: bool
    wall_time: float


def pso_optimize_paa(path_sets, budget: LinkBudget, cfg: PsoConfig, rng: np.random.Generator,
                     sectors: SectorArray | None = None, realisations: int = 1,
                     draws: InstantaneousDraws | None = None) -> PsoResult:
    """Global-best PSO over in-panel antenna offsets of the three sectors.

    Fitness is the sum log of the users' instantaneous MMSE rates on a fixed
    channel draw; layouts that break the half-wavelength spacing get a
    large negative fitness.  Particle 0 starts at the fixed grid layout.
    """
    t0 = time.perf_counter()
    sectors = sectors or SectorArray()
    if draws is None:
        draws = InstantaneousDraws.draw(path_sets, rng, realisations)
    S, A = len(sectors.azimuths_deg), sectors.antennas_per_sector
    shape = (S, A, 2)
    half = sectors.panel_edge / 2.0
    dim = S * A * 2
    vmax = cfg.velocity_clamp * 2.0 * half

    def fitness(x):
        off = x.reshape(shape)
        viol = spacing_violation(off, sectors.spacing - 1e-12)
        if viol > 0:
            return INFEASIBLE_FITNESS * (1.0 + viol)
        rates = instantaneous_rates(sectors.state(off), draws, budget)
        return sum_log_rate(rates) if np.all(rates > 0) else INFEASIBLE_FITNESS

    grid = np.broadcast_to(sectors.grid_offsets(), shape).reshape(-1)
    X = rng.uniform(-half, half, (cfg.swarm_size, dim))
    X[0] = grid
    V = rng.uniform(-vmax, vmax, (cfg.swarm_size, dim))
    F = np.array([fitness(x) for x in X])
    P, PF = X.copy(), F.copy()
    g = int(np.argmax(PF))
    trace = [float(PF[g])]
    for _ in range(cfg.iterations):
        r1 = rng.uniform(size=X.shape)
        r2 = rng.uniform(size=X.shape)
        V = cfg.inertia * V + cfg.cognitive * r1 * (P - X) + cfg.social * r2 * (P[g] - X)
        V = np.clip(V, -vmax, vmax)
        X = np.clip(X + V, -half, half)
        F = np.array([fitness(x) for x in X])
        better = F > PF
        P[better], PF[better] = X[better], F[better]
        g = int(np.argmax(PF))
        trace.append(float(PF[g]))
    best = P[g].reshape(shape)
    rates = instantaneous_rates(sectors.state(best), draws, budget)
    feasible = spacing_violation(best, sectors.spacing - 1e-12) == 0
    return PsoResult(best, float(PF[g]), rates, trace, feasible, time.perf_counter() - t0)


# --------------------------------------------------------------------------- MC-AO

@dataclass(frozen=True)
class McAoConfig:
    samples: int = 1000
    init_count: int = 3
    sweeps: int = 2
    inner_iterations: int = 3
    fd_step: float = 2.0 ** -16
    armijo_init: float = 1.0
    armijo_shrink: float = 0.5
    armijo_max: int = 20
    region_edge: float = 1.0

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("W must be at least 1")
        if self.init_count < 1 or self.sweeps < 0 or self.inner_iterations < 0:
            raise ConfigError("MC-AO loop counts must be non-negative (init_count positive)")
        if not 0 < self.armijo_shrink < 1 or not self.fd_step > 0:
            raise ConfigError("bad step parameters")


@dataclass
class McAoResult:
    poses: tuple
    objective: float
    trace: list
    init_objectives: list
    wall_time: float
    feasible: bool


def _poses_from(q: np.ndarray, u: np.ndarray) -> tuple:
    return tuple(SurfacePose(qb, EulerRotation.from_array(ub)) for qb, ub in zip(q.reshape(-1, 3), u.reshape(-1, 3)))


def mc_feasible(poses, template: SurfaceTemplate, region_edge: float) -> bool:
    q = np.array([p.position for p in poses])
    if np.any(np.abs(q) > region_edge / 2.0 + 1e-12):
        return False
    return polygon_pairs_ok(poses, template)


def mc_objective(poses, path_sets, hardware: ArrayHardware, budget: LinkBudget, W: int, seed_seq) -> float:
    """Sum log of Monte Carlo average rates with a reproducible (common) draw."""
    state = hardware.state(poses)
    scis = [sci_matrix(state, ps) for ps in path_sets]
    rep = monte_carlo_rate(scis, budget, W, np.random.default_rng(seed_seq))
    return rep.sum_log_rate


def _random_feasible_start(B: int, hardware: ArrayHardware, cfg: McAoConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    tmpl = hardware.template
    for _ in range(100):
        u = rng.uniform(0.0, 2 * np.pi, (B, 3))
        rots = [EulerRotation.from_array(x) for x in u]
        normals = np.array([surface_normal(r, tmpl) for r in rots])
        try:
            rep = place_all(normals, tmpl.cer_diameter / 2.0, rots, tmpl, region_edge=cfg.region_edge)
        except PlacementError:
            continue
        return rep.positions.reshape(-1), u.reshape(-1)
    raise PlacementError("could not draw a feasible random start")


def _ascend(f, x, feasible, cfg: McAoConfig, f0: float) -> tuple[np.ndarray, float, list]:
    """Armijo gradient ascent on ``f`` with infeasible trials rejected."""
    trace = []
    for _ in range(cfg.inner_iterations):
        g = np.empty_like(x)
        for i in range(x.size):
            probe = x.copy()
            probe[i] += cfg.fd_step
            g[i] = (f(probe) - f0) / cfg.fd_step if feasible(probe) else 0.0
        if not np.any(g) or not np.all(np.isfinite(g)):
            break
        tau, accepted = cfg.armijo_init, False
        for _nu in range(cfg.armijo_max + 1):
            trial = x + tau * g
            if feasible(trial):
                ft = f(trial)
                if ft - f0 > tau * float(g @ (trial - x)):
                    x, f0, accepted = trial, ft, True
                    break
            tau *= cfg.armijo_shrink
        if not accepted:
            break
        trace.append(f0)
    return x, f0, trace


def mc_ao_optimize(path_sets, hardware: ArrayHardware, budget: LinkBudget, n_surfaces: int,
                   cfg: McAoConfig, rng: np.random.Generator) -> McAoResult:
    """Alternate rotation and position ascent of the Monte Carlo objective.

    Each sweep fixes its own common random numbers.  Poses that break the
    pairwise surface-halfspace constraint or leave the region are rejected.
    The best of ``init_count`` random feasible starts is returned.
    """
    if n_surfaces < 1:
        raise InvalidInputError("need at least one surface")
    t0 = time.perf_counter()
    tmpl = hardware.template
    base_entropy = int(rng.integers(2 ** 63))
    best = None
    init_objs = []
    for i in range(cfg.init_count):
        q, u = _random_feasible_start(n_surfaces, hardware, cfg, rng)
        trace = []
        for sweep in range(cfg.sweeps):
            seq = np.random.SeedSequence(base_entropy, spawn_key=(i, sweep))

            def f(qq, uu):
                return mc_objective(_poses_from(qq, uu), path_sets, hardware, budget, cfg.samples, seq)

            def ok(qq, uu):
                return mc_feasible(_poses_from(qq, uu), tmpl, cfg.region_edge)

            cur = f(q, u)
            if sweep == 0:
                init_objs.append(cur)
            u, cur, tr = _ascend(lambda x: f(q, x), u, lambda x: ok(q, x), cfg, cur)
            trace += tr
            q, cur, tr = _ascend(lambda x: f(x, u), q, lambda x: ok(x, u), cfg, cur)
            trace += tr
        if cfg.sweeps == 0:
            seq = np.random.SeedSequence(base_entropy, spawn_key=(i, 0))
            cur = mc_objective(_poses_from(q, u), path_sets, hardware, budget, cfg.samples, seq)
            init_objs.append(cur)
        # compare starts on one shared draw
        final_seq = np.random.SeedSequence(base_entropy, spawn_key=SCORING_KEY)
        score = mc_objective(_poses_from(q, u), path_sets, hardware, budget, cfg.samples, final_seq)
        if best is None or score > best[0]:
            best = (score, q.copy(), u.copy(), trace)
    score, q, u, trace = best
    poses = _poses_from(q, u)
    return McAoResult(poses, float(score), trace, init_objs, time.perf_counter() - t0,
                      mc_feasible(poses, tmpl, cfg.region_edge))
