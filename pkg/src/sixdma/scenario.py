"""Ground-truth multipath generation for a user/scatterer deployment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import PathSet
from .errors import InvalidInputError

MAX_DRAW_RETRIES = 100


@dataclass(frozen=True)
class UserCluster:
    center: tuple
    radius: float
    count: int


@dataclass(frozen=True)
class Deployment:
    """Users, scatterers and link parameters of a simulated cell.

    Path powers follow ``(wavelength / 4 pi)^2 * d^-eta`` with ``d`` the total
    geometric length of the path.
    """

    scatterers: tuple
    clusters: tuple
    bs_position: tuple = (0.0, 0.0, 0.0)
    path_loss_exponent: float = 3.0
    wavelength: float = 0.125
    user_power: float | tuple = 0.1
    noise_power: float = 1e-13
    direct_blocked: bool = True

    def __post_init__(self):
        if not self.path_loss_exponent > 0:
            raise InvalidInputError("path-loss exponent must be positive")
        if not self.wavelength > 0:
            raise InvalidInputError("wavelength must be positive")
        if not self.noise_power > 0:
            raise InvalidInputError("noise power must be positive")
        clusters = tuple(c if isinstance(c, UserCluster) else UserCluster(**c) for c in self.clusters)
        for c in clusters:
            if c.radius < 0 or c.count < 1:
                raise InvalidInputError(f"bad cluster {c}")
        object.__setattr__(self, "clusters", clusters)
        if np.any(self.powers <= 0):
            raise InvalidInputError("user powers must be positive")
        if self.direct_blocked and len(self.scatterers) == 0:
            raise InvalidInputError("no paths: direct link blocked and no scatterers")

    @property
    def n_users(self) -> int:
        return sum(c.count for c in self.clusters)

    @property
    def powers(self) -> np.ndarray:
        p = np.atleast_1d(np.asarray(self.user_power, dtype=float))
        if p.size == 1:
            return np.full(self.n_users, float(p[0]))
        if p.size != self.n_users:
            raise InvalidInputError("need one transmit power per user")
        return p


def reference_deployment(**overrides) -> Deployment:
    """Five users in three clusters, reflected by three shared scatterers onto a BS at the origin."""
    kw = dict(
        scatterers=((-40.0, 30.0, 10.0), (20.0, 0.0, 10.0), (0.0, -10.0, 0.0)),
        clusters=(
            UserCluster((-40.0, 50.0, 0.0), 5.0, 2),
            UserCluster((30.0, 80.0, 0.0), 5.0, 1),
            UserCluster((-10.0, -20.0, 0.0), 10.0, 2),
        ),
    )
    kw.update(overrides)
    return Deployment(**kw)


@dataclass(frozen=True)
class GroundTruth:
    user_positions: np.ndarray
    path_sets: tuple = field(default_factory=tuple)


def path_power(total_length: float, wavelength: float, exponent: float) -> float:
    return (wavelength / (4 * np.pi)) ** 2 * total_length ** (-exponent)


def _uniform_in_ball(center, radius, rng) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    if radius == 0:
        return center.copy()
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    return center + radius * rng.uniform() ** (1.0 / 3.0) * v


def user_paths(user, dep: Deployment) -> PathSet:
    bs = np.asarray(dep.bs_position, dtype=float)
    doas, powers = [], []
    if not dep.direct_blocked:
        d = np.linalg.norm(user - bs)
        doas.append((user - bs) / d)
        powers.append(path_power(d, dep.wavelength, dep.path_loss_exponent))
    for s in dep.scatterers:
        s = np.asarray(s, dtype=float)
        leg = np.linalg.norm(s - bs)
        # DoA points from the array toward the last bounce
        doas.append((s - bs) / leg)
        powers.append(path_power(np.linalg.norm(user - s) + leg, dep.wavelength, dep.path_loss_exponent))
    return PathSet(np.array(doas), np.array(powers))


def generate_ground_truth(dep: Deployment, rng: np.random.Generator) -> GroundTruth:
    bs = np.asarray(dep.bs_position, dtype=float)
    anchors = [bs] + [np.asarray(s, dtype=float) for s in dep.scatterers]
    for s in anchors[1:]:
        if np.linalg.norm(s - bs) < 1e-9:
            raise InvalidInputError("scatterer coincides with the base station")
    users = []
    for c in dep.clusters:
        for _ in range(c.count):
            for _attempt in range(MAX_DRAW_RETRIES):
                u = _uniform_in_ball(c.center, c.radius, rng)
                if min(np.linalg.norm(u - a) for a in anchors) > 1e-9:
                    break
            else:
                raise InvalidInputError(f"cluster {c} keeps producing users on a scatterer or the BS")
            users.append(u)
    users = np.array(users)
    return GroundTruth(users, tuple(user_paths(u, dep) for u in users))


def normalized_sci_error(perfect, estimated) -> float:
    """``||P - E||_F / (||P||_F + ||E||_F)`` over the users' stacked covariances."""
    perfect = [np.asarray(p) for p in perfect]
    estimated = [np.asarray(e) for e in estimated]
    if len(perfect) != len(estimated) or any(p.shape != e.shape for p, e in zip(perfect, estimated)):
        raise InvalidInputError("perfect and estimated SCI shapes differ")
    P = np.concatenate(perfect, axis=1)
    E = np.concatenate(estimated, axis=1)
    denom = np.linalg.norm(P) + np.linalg.norm(E)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(P - E) / denom)
