"""Uplink MMSE rate objectives: Monte Carlo average and its Jensen bounds.

Per-user rates are in bits/s/Hz (log base 2); the fairness objective sums
natural logarithms of those rates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_INNER_SAMPLES = 200


@dataclass(frozen=True)
class LinkBudget:
    powers: np.ndarray
    noise_power: float

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.powers, dtype=float))
        if np.any(p <= 0) or not self.noise_power > 0:
            raise InvalidInputError("transmit and noise powers must be positive")
        object.__setattr__(self, "powers", p)

    @property
    def n_users(self) -> int:
        return len(self.powers)


@dataclass(frozen=True)
class RateReport:
    per_user: np.ndarray
    sum_log_rate: float
    std_error: np.ndarray | None = None

    @classmethod
    def from_rates(cls, rates, std_error=None) -> "RateReport":
        rates = np.asarray(rates, dtype=float)
        slr = float(np.sum(np.log(rates))) if np.all(rates > 0) else -np.inf
        return cls(rates, slr, std_error)


def sum_log_rate(rates) -> float:
    rates = np.asarray(rates, dtype=float)
    if np.any(~(rates > 0)):
        raise InvalidInputError(f"sum log-rate undefined for non-positive rates {rates}")
    return float(np.sum(np.log(rates)))


def _check_scis(scis, budget: LinkBudget) -> list[np.ndarray]:
    scis = [np.asarray(s, dtype=complex) for s in scis]
    if len(scis) != budget.n_users:
        raise InvalidInputError("one covariance per user is required")
    dim = scis[0].shape[0]
    for s in scis:
        if s.shape != (dim, dim):
            raise InvalidInputError("covariances must be square and equally sized")
        scale = np.abs(s).max(initial=0.0)
        if np.abs(s - s.conj().T).max(initial=0.0) > 1e-10 * scale:
            raise InvalidInputError("covariance is not Hermitian")
    return scis


def _psd_factor(sigma: np.ndarray) -> np.ndarray:
    """``F`` with ``F F^H = sigma`` restricted to the numerical range, shape ``(n, r)``."""
    w, U = np.linalg.eigh((sigma + sigma.conj().T) / 2)
    tr = max(float(np.trace(sigma).real), 0.0)
    if w.min(initial=0.0) < -1e-10 * max(tr, np.finfo(float).tiny):
        raise InvalidInputError("covariance is not positive semidefinite")
    keep = w > 1e-13 * max(w.max(initial=0.0), np.finfo(float).tiny)
    return U[:, keep] * np.sqrt(w[keep])


def _cn(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def monte_carlo_rate(scis, budget: LinkBudget, W: int, rng: np.random.Generator, chunk: int = 4096) -> RateReport:
    """Average MMSE rate per user over ``W`` joint channel draws.

    Uses ``h^H B_k^{-1} h p_k = x / (1 - x)`` with ``x = p_k h^H A^{-1} h``
    and ``A`` the full received covariance, so one solve serves all users.
    """
    if W < 1:
        raise InvalidInputError("W must be at least 1")
    scis = _check_scis(scis, budget)
    K, n = len(scis), scis[0].shape[0]
    factors = [_psd_factor(s) for s in scis]
    snr = budget.powers / budget.noise_power
    total = np.zeros(K)
    total_sq = np.zeros(K)
    done = 0
    while done < W:
        w = min(chunk, W - done)
        H = np.zeros((w, n, K), dtype=complex)
        for k, F in enumerate(factors):
            if F.shape[1]:
                H[:, :, k] = _cn(rng, (w, F.shape[1])) @ F.T
        G = H * np.sqrt(snr)
        A = np.einsum("wik,wjk->wij", G, G.conj()) + np.eye(n)
        X = np.linalg.solve(A, G)
        x = np.einsum("wik,wik->wk", G.conj(), X).real
        r = -np.log1p(-np.clip(x, 0.0, 1.0 - 1e-16)) / np.log(2.0)
        total += r.sum(axis=0)
        total_sq += (r ** 2).sum(axis=0)
        done += w
    mean = total / W
    var = np.maximum(total_sq / W - mean ** 2, 0.0)
    se = np.sqrt(var / max(W - 1, 1))
    return RateReport.from_rates(mean, se)


def expected_interference(scis, budget: LinkBudget, k: int) -> np.ndarray:
    """``E[B_k] = sum_{k' != k} (p_k'/p_k) Sigma_k' + (sigma^2/p_k) I``."""
    p = budget.powers
    n = scis[0].shape[0]
    EB = (budget.noise_power / p[k]) * np.eye(n, dtype=complex)
    for j, s in enumerate(scis):
        if j != k:
            EB = EB + (p[j] / p[k]) * s
    return EB


def jensen_lower_surrogate(scis, budget: LinkBudget) -> np.ndarray:
    """Closed-form ``log2(1 + tr(E[B_k]^{-1} Sigma_k))`` for every user."""
    scis = _check_scis(scis, budget)
    out = np.empty(len(scis))
    for k, s in enumerate(scis):
        EB = expected_interference(scis, budget, k)
        out[k] = np.log2(1.0 + np.trace(np.linalg.solve(EB, s)).real)
    return out


def jensen_upper_rate(scis, budget: LinkBudget, W_inner: int = DEFAULT_INNER_SAMPLES,
                      rng: np.random.Generator | None = None, moment_matched: bool = True) -> np.ndarray:
    """``log2(1 + tr(E[B_k^{-1}] Sigma_k))`` with the expectation sampled.

    With ``moment_matched`` each interferer's draws are orthonormalised so
    their sample covariance equals ``Sigma_k'`` exactly; the sample mean of
    ``B_k`` then equals ``E[B_k]`` and the estimate never falls below the
    closed-form lower surrogate.
    """
    scis = _check_scis(scis, budget)
    K, n = len(scis), scis[0].shape[0]
    if rng is None:
        rng = np.random.default_rng(0)
    p = budget.powers
    factors = [_psd_factor(s) for s in scis]
    out = np.empty(K)
    if K == 1:
        return jensen_lower_surrogate(scis, budget)
    draws = []
    for F in factors:
        r = F.shape[1]
        if r == 0:
            draws.append(np.zeros((W_inner, n), dtype=complex))
            continue
        V = _cn(rng, (W_inner, r))
        if moment_matched:
            if W_inner < r:
                raise InvalidInputError("W_inner must be at least the covariance rank")
            Q, _ = np.linalg.qr(V)
            V = np.sqrt(W_inner) * Q
        draws.append(V @ F.T)
    for k in range(K):
        B = (budget.noise_power / p[k]) * np.broadcast_to(np.eye(n), (W_inner, n, n)).astype(complex)
        for j in range(K):
            if j != k:
                h = draws[j]
                B = B + (p[j] / p[k]) * np.einsum("wi,wj->wij", h, h.conj())
        mean_inv = np.linalg.inv(B).mean(axis=0)
        out[k] = np.log2(1.0 + np.trace(mean_inv @ scis[k]).real)
    return out
