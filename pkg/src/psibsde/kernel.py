"""Seeded Brownian ensembles, discrete Ito integrals and Girsanov weights.

Sampling scheme (fixed, regression constants depend on it): paths are
grouped in blocks of ``BLOCK_SIZE``; block ``b`` draws its Gaussians from
``PCG64(SeedSequence([seed, b]))`` with numpy's ziggurat ``standard_normal``,
filled row-major as (path, step, coordinate). Path ``m`` is therefore a pure
function of ``(seed, m)``, whatever the number of workers or the total M.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import CapacityError, DomainError, HypothesisError

BLOCK_SIZE = 8192
DEFAULT_MAX_ELEMENTS = 400_000_000
SEED_LIMIT = 2**64


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError(f"T must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t

    def step_of(self, t: float) -> int:
        """Grid index of time t (must be a grid point up to rounding)."""
        k = int(round(t / self.dt))
        if not (0 <= k <= self.n_steps) or abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise DomainError(f"time {t} is not on the grid")
        return k


def _block_normals(seed: int, block: int, rows: int, n_steps: int, d: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, block])))
    return rng.standard_normal((rows, n_steps, d))


class PathEnsemble:
    """M discrete d-dimensional Brownian paths on a uniform grid.

    ``increments`` has shape (M, n_steps, d); ``W`` is the cumulated path
    with ``W[:, 0] = 0``. Arrays are read-only.
    """

    def __init__(self, grid: TimeGrid, d: int, M: int, increments: np.ndarray, seed: int):
        if increments.shape != (M, grid.n_steps, d):
            raise DomainError(f"increments shape {increments.shape} != {(M, grid.n_steps, d)}")
        increments.setflags(write=False)
        self.grid = grid
        self.d = d
        self.M = M
        self.increments = increments
        self.seed = seed

    @cached_property
    def W(self) -> np.ndarray:
        W = np.zeros((self.M, self.grid.n_steps + 1, self.d))
        np.cumsum(self.increments, axis=1, out=W[:, 1:])
        W.setflags(write=False)
        return W

    def terminal(self) -> np.ndarray:
        return self.W[:, -1, :]


def generate_paths(grid: TimeGrid, d: int, M: int, seed: int, jobs: int = 1,
                   max_elements: int = DEFAULT_MAX_ELEMENTS) -> PathEnsemble:
    if int(d) != d or d < 1:
        raise DomainError(f"d must be a positive integer, got {d}")
    if int(M) != M or M < 1:
        raise DomainError(f"M must be a positive integer, got {M}")
    if int(seed) != seed or not 0 <= seed < SEED_LIMIT:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    size = M * grid.n_steps * d
    if size > max_elements:
        raise CapacityError(f"M*n_steps*d = {size} exceeds the cap {max_elements}")

    inc = np.empty((M, grid.n_steps, d))
    sqrt_dt = math.sqrt(grid.dt)
    n_blocks = -(-M // BLOCK_SIZE)

    def fill(block):
        lo = block * BLOCK_SIZE
        hi = min(M, lo + BLOCK_SIZE)
        z = _block_normals(seed, block, hi - lo, grid.n_steps, d)
        np.multiply(z, sqrt_dt, out=inc[lo:hi])

    if jobs > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(fill, range(n_blocks)))
    else:
        for b in range(n_blocks):
            fill(b)
    return PathEnsemble(grid, d, M, inc, seed)


class AdaptedDrift:
    """A bounded drift q[m, k, :] that depends on path m only through steps <= k.

    Build through :meth:`from_callback`, :meth:`constant` or :meth:`zeros`;
    the callback receives the path prefix, which is what makes the result
    adapted.
    """

    def __init__(self, values: np.ndarray, bound: float):
        norms = np.sqrt(np.sum(values * values, axis=-1))
        if bound < 0 or np.any(norms > bound * (1 + 1e-12) + 1e-300):
            raise DomainError(f"drift norm {norms.max()} exceeds bound {bound}")
        self.values = values
        self.bound = float(bound)

    @classmethod
    def from_callback(cls, paths: PathEnsemble,
                      fn: Callable[[int, np.ndarray], np.ndarray], bound: float) -> "AdaptedDrift":
        """fn(k, W[:, :k+1, :]) -> array broadcastable to (M, d)."""
        vals = np.empty_like(paths.increments)
        for k in range(paths.grid.n_steps):
            vals[:, k, :] = fn(k, paths.W[:, : k + 1, :])
        vals.setflags(write=False)
        return cls(vals, bound)

    @classmethod
    def constant(cls, paths: PathEnsemble, vector) -> "AdaptedDrift":
        vec = np.broadcast_to(np.asarray(vector, dtype=float), (paths.d,))
        vals = np.broadcast_to(vec, paths.increments.shape)
        return cls(vals, float(np.linalg.norm(vec)))

    @classmethod
    def zeros(cls, paths: PathEnsemble) -> "AdaptedDrift":
        return cls.constant(paths, np.zeros(paths.d))


def _check_range(paths, from_step, to_step):
    n = paths.grid.n_steps
    if not (0 <= from_step <= to_step <= n):
        raise IndexError(f"need 0 <= from_step <= to_step <= {n}, got {from_step}, {to_step}")


def _check_drift(paths, q):
    if q.values.shape != paths.increments.shape:
        raise DomainError("drift and path ensemble have different shapes")


def stochastic_integral(paths: PathEnsemble, q: AdaptedDrift, from_step: int, to_step: int) -> np.ndarray:
    """Left-point sum  sum_{k=from}^{to-1} <q_k, dW_k>  per path."""
    _check_range(paths, from_step, to_step)
    _check_drift(paths, q)
    if from_step == to_step:
        return np.zeros(paths.M)
    sl = slice(from_step, to_step)
    return np.einsum("mkd,mkd->m", q.values[:, sl, :], paths.increments[:, sl, :])


def girsanov_weight(paths: PathEnsemble, q: AdaptedDrift, from_step: int, to_step: int) -> np.ndarray:
    """Discrete stochastic exponential exp(I - 1/2 sum |q_k|^2 dt) per path."""
    integral = stochastic_integral(paths, q, from_step, to_step)
    sl = slice(from_step, to_step)
    quad = np.einsum("mkd,mkd->m", q.values[:, sl, :], q.values[:, sl, :]) * paths.grid.dt
    return np.exp(integral - 0.5 * quad)


@dataclass(frozen=True)
class GaussMomentReport:
    estimate: float
    bound: float
    std_error: float
    t: float
    gamma: float
    mu: float

    @property
    def violation(self) -> bool:
        return self.estimate > self.bound + 3.0 * self.std_error

    @property
    def z_score(self) -> float:
        return (self.estimate - self.bound) / self.std_error if self.std_error > 0 else 0.0


def gauss_moment_check(paths: PathEnsemble, q: AdaptedDrift, mu: float, from_step: int) -> GaussMomentReport:
    """Monte Carlo estimate of E exp(I^2 / (2 mu^2)) against 1/sqrt(1 - gamma^2 (T - t) / mu^2).

    I is the integral of q from ``from_step`` to T and gamma the drift bound.
    """
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    t = float(paths.grid.times[from_step]) if 0 <= from_step <= paths.grid.n_steps else None
    if t is None:
        raise IndexError(f"from_step {from_step} out of range")
    gamma = q.bound
    radicand = 1.0 - gamma**2 * (paths.grid.T - t) / mu**2
    if radicand <= 0:
        raise HypothesisError(
            f"mu={mu} must exceed gamma*sqrt(T-t)={gamma * math.sqrt(paths.grid.T - t)}")
    integral = stochastic_integral(paths, q, from_step, paths.grid.n_steps)
    sample = np.exp(integral**2 / (2.0 * mu**2))
    se = float(sample.std(ddof=1) / math.sqrt(paths.M)) if paths.M > 1 else 0.0
    return GaussMomentReport(float(sample.mean()), 1.0 / math.sqrt(radicand), se, t, gamma, float(mu))
