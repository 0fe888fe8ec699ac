"""Backward induction for scalar BSDEs  Y_t = xi + int_t^T f(s, Y, Z) ds - int_t^T Z dW.

Conditional expectations are least-squares regressions in the standardized
Brownian state W_k / sqrt(t_k), either on global Hermite polynomials or (d = 1)
on local polynomials over equiprobable bins. The fitted continuation value is
clipped to the range of its regression target. One step reads

    Z_k = E_k[(Y_{k+1} - E_k[Y_{k+1}]) dW_k] / dt
    Y_k = E_k[Y_{k+1} + (1 - theta) dt f_{k+1}] + theta dt f(t_k, Y_k, Z_k)

with theta = 1/2 (the very first backward step uses theta = 1, since no Z
is available at T). The implicit equation in Y_k is solved by damped
fixed-point iteration, a contraction as long as beta * dt < 1.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e
from scipy.stats import norm

from .errors import ConditioningError, ConvergenceError, DomainError, StepSizeError
from .kernel import AdaptedDrift, PathEnsemble, TimeGrid

RIDGE = 1e-10
MAX_CONDITION = 1e12
RIDGE_TRIGGER = 1e8
PARTITION_BINS = 16
BASES = ("hermite", "partition")
THETA = 0.5


@dataclass
class GeneratorSpec:
    """Driver f(t, y, z) with |f(t, y, z) - f0(t)| <= beta |y| + gamma |z|.

    ``driver`` is vectorized: driver(t, y[M], z[M, d]) -> [M]. The growth
    bound (and the Lipschitz bound when ``lipschitz`` is set) is spot-checked
    on seeded random points at construction.
    """

    beta: float
    gamma: float
    f0: Callable[[float], float]
    driver: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    lipschitz: bool = True
    name: str = "custom"
    check_dim: int = 1
    check_T: float = 1.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        self.spot_check()

    def spot_check(self, n: int = 512, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        d = self.check_dim
        for t in rng.uniform(0, self.check_T, 4):
            y = rng.standard_normal(n) * rng.choice([0.1, 1, 100], n)
            z = rng.standard_normal((n, d)) * rng.choice([0.1, 1, 100], (n, 1))
            y[:8] = 0.0
            z[:8] = 0.0
            f = self.driver(t, y, z)
            slack = 1e-12 * (1 + np.abs(f))
            if np.any(np.abs(f - self.f0(t)) > self.beta * np.abs(y) + self.gamma * _norm(z) + slack):
                raise DomainError(f"driver {self.name!r} violates the linear growth bound")
            if self.lipschitz:
                step = rng.choice([1e-4, 1e-2, 1.0], (n, 1))
                y2 = y + rng.standard_normal(n) * step[:, 0]
                z2 = z + rng.standard_normal((n, d)) * step
                f2 = self.driver(t, y2, z2)
                bound = self.beta * np.abs(y - y2) + self.gamma * _norm(z - z2)
                if np.any(np.abs(f - f2) > bound + 1e-12 * (1 + np.abs(f) + np.abs(f2))):
                    raise DomainError(f"driver {self.name!r} is not Lipschitz with (beta, gamma)")


@dataclass
class TerminalSpec:
    """Terminal value as a function of the discrete path: xi(W[M, n+1, d]) -> [M]."""

    xi: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def evaluate(self, paths: PathEnsemble) -> np.ndarray:
        vals = np.asarray(self.xi(paths.W), dtype=float)
        if vals.shape != (paths.M,):
            raise DomainError(f"terminal callback returned shape {vals.shape}, expected ({paths.M},)")
        return vals


@dataclass(frozen=True)
class TruncationIndex:
    n: int
    p: int

    def __post_init__(self):
        if not (self.n >= 1 and self.p >= 1):
            raise DomainError(f"truncation levels must be >= 1, got n={self.n}, p={self.p}")


def _norm(z):
    if z.shape[-1] == 1:
        return np.abs(z[..., 0])
    return np.sqrt(np.sum(z * z, axis=-1))


class HermiteBasis:
    """Probabilists' Hermite polynomials of total degree <= degree in W_k / sqrt(t_k)."""

    def __init__(self, degree: int, d: int):
        if degree < 0:
            raise DomainError(f"basis degree must be >= 0, got {degree}")
        self.degree = degree
        self.d = d
        self.multi_indices = [
            idx for idx in itertools.product(range(degree + 1), repeat=d) if sum(idx) <= degree
        ]
        self.multi_indices.sort(key=lambda idx: (sum(idx), idx))

    @property
    def size(self) -> int:
        return len(self.multi_indices)

    def design(self, state: np.ndarray, t: float) -> np.ndarray:
        """(M, K) design matrix; at t = 0 the state is deterministic and only the constant is kept."""
        M = state.shape[0]
        if t <= 0:
            return np.ones((M, 1))
        x = state / math.sqrt(t)
        per_coord = [hermite_e.hermevander(x[:, i], self.degree) for i in range(self.d)]
        cols = []
        for idx in self.multi_indices:
            col = np.ones(M)
            for i, power in enumerate(idx):
                if power:
                    col = col * per_coord[i][:, power]
            cols.append(col)
        return np.column_stack(cols)


class PartitionBasis:
    """Local polynomials of degree <= degree on equiprobable bins of W_k / sqrt(t_k) (d = 1).

    Bounded targets are fitted without the tail blow-up of global polynomials.
    """

    def __init__(self, degree: int, d: int, bins: int = PARTITION_BINS):
        if degree < 0:
            raise DomainError(f"basis degree must be >= 0, got {degree}")
        if d != 1:
            raise DomainError("the partition basis is only available for d = 1")
        if bins < 1:
            raise DomainError(f"need at least one bin, got {bins}")
        self.degree = degree
        self.d = d
        self.bins = bins
        # equiprobable cells, with the outer cells split further at tail
        # probabilities 4^-j so extreme paths are not fitted by extrapolation
        probs = list(np.arange(1, bins) / bins)
        tail = 1.0 / bins / 4.0
        while tail >= 1.0 / 1024:
            probs += [tail, 1.0 - tail]
            tail /= 4.0
        probs = np.unique(probs)
        self.edges = norm.ppf(probs)
        mids = np.concatenate([[probs[0] / 2], (probs[1:] + probs[:-1]) / 2, [(1 + probs[-1]) / 2]])
        self.centers = norm.ppf(mids)
        self.cells = len(self.centers)

    @property
    def size(self) -> int:
        return self.cells * (self.degree + 1)

    def design(self, state: np.ndarray, t: float) -> np.ndarray:
        M = state.shape[0]
        if t <= 0:
            return np.ones((M, 1))
        x = state[:, 0] / math.sqrt(t)
        cell = np.searchsorted(self.edges, x)
        offset = x - self.centers[cell]
        A = np.zeros((M, self.size))
        rows = np.arange(M)
        for power in range(self.degree + 1):
            A[rows, cell * (self.degree + 1) + power] = offset**power
        return A


def make_basis(kind: str, degree: int, d: int):
    if kind == "hermite":
        return HermiteBasis(degree, d)
    if kind == "partition":
        return PartitionBasis(degree, d)
    raise DomainError(f"unknown basis {kind!r}; expected one of {BASES}")


def least_squares(A: np.ndarray, targets: np.ndarray, ridge: float = RIDGE):
    """Normal-equation least squares; returns (coefficients, condition number, ridge used).

    The ridge term is only added when the Gram matrix is close to singular.
    """
    M = A.shape[0]
    gram = A.T @ A / M
    rhs = A.T @ targets / M
    cond = float(np.linalg.cond(gram))
    used = 0.0
    if not cond < RIDGE_TRIGGER:
        used = ridge
        gram[np.diag_indices_from(gram)] += ridge
        cond = float(np.linalg.cond(gram))
        if not cond < MAX_CONDITION:
            raise ConditioningError(f"regression Gram matrix condition number {cond:.3g} too large")
    return np.linalg.solve(gram, rhs), cond, used


@dataclass
class SolutionField:
    """Discrete solution: Y[M, n+1], Z[M, n, d] plus the regression coefficients that produced them."""

    Y: np.ndarray
    Z: np.ndarray
    grid: TimeGrid
    diagnostics: dict = field(default_factory=dict)
    coefficients: list | None = None
    basis_degree: int = 0
    seed: int | None = None
    basis: str = "hermite"

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[2]

    @property
    def y0(self) -> float:
        return float(self.Y[:, 0].mean())

    @property
    def y0_std_error(self) -> float:
        return float(self.diagnostics.get("y0_std_error", 0.0))


def _fixed_point(const, z, t, gen, theta_dt, tol, max_iter, damping):
    y = const.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        y_new = const + theta_dt * gen.driver(t, y, z)
        if damping != 1.0:
            y_new = (1.0 - damping) * y + damping * y_new
        residual = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        y = y_new
        if residual <= tol:
            return y, it, residual
    raise ConvergenceError(f"fixed point at t={t} not converged after {max_iter} iterations "
                           f"(residual {residual:.3g})", residual)


def _adjoint_std_error(gen, Y, Z, paths, h=1e-6):
    """Standard error of Y_0 from the linearized (adjoint) representation

        Y_0 ~ E[G_N xi + sum_k G_k (f_k - u_k Y_k - <v_k, Z_k>) dt],
        G_{k+1} = G_k exp(u_k dt + <v_k, dW_k> - |v_k|^2 dt / 2),

    with u, v central-difference derivatives of the driver. Unlike the plain
    spread of xi + sum f dt it accounts for the change of measure induced by
    z-dependence.
    """
    M = paths.M
    if M < 2:
        return 0.0
    dt, d = paths.grid.dt, paths.d
    gam = np.ones(M)
    acc = np.zeros(M)
    for k, t in enumerate(paths.grid.times[:-1]):
        y, z = Y[:, k], Z[:, k, :]
        f = gen.driver(t, y, z)
        hy = h * (1.0 + np.abs(y))
        u = (gen.driver(t, y + hy, z) - gen.driver(t, y - hy, z)) / (2 * hy)
        v = np.empty((M, d))
        for i in range(d):
            hz = h * (1.0 + np.abs(z[:, i]))
            zp, zm = z.copy(), z.copy()
            zp[:, i] += hz
            zm[:, i] -= hz
            v[:, i] = (gen.driver(t, y, zp) - gen.driver(t, y, zm)) / (2 * hz)
        acc += gam * (f - u * y - np.sum(v * z, axis=1)) * dt
        gam = gam * np.exp(u * dt + np.sum(v * paths.increments[:, k, :], axis=1)
                           - 0.5 * np.sum(v * v, axis=1) * dt)
    sample = gam * Y[:, -1] + acc
    return float(sample.std(ddof=1) / math.sqrt(M))


def _backward(gen, xi_values, paths, basis, tol, max_iter, damping, coefficients=None):
    grid = paths.grid
    N, dt, times = grid.n_steps, grid.dt, grid.times
    M, d = paths.M, paths.d
    Y = np.empty((M, N + 1))
    Z = np.empty((M, N, d))
    Y[:, N] = xi_values
    iters = np.zeros(N, dtype=int)
    residuals = np.zeros(N)
    conds = np.full(N, np.nan)
    ridge_used = np.zeros(N)
    fitted = [None] * N
    f_next = None
    # pathwise xi + sum of weighted driver increments; its mean is Y_0
    realized = Y[:, N].copy()
    for k in range(N - 1, -1, -1):
        A = basis.design(paths.W[:, k, :], times[k])
        theta = 1.0 if f_next is None else THETA
        if coefficients is None:
            target_y = Y[:, k + 1] if f_next is None else Y[:, k + 1] + (1 - theta) * dt * f_next
            cy, conds[k], ridge_used[k] = least_squares(A, np.column_stack([target_y, Y[:, k + 1]]))
            innovation = Y[:, k + 1] - A @ cy[:, 1]
            cz, _, _ = least_squares(A, innovation[:, None] * paths.increments[:, k, :])
            coef = np.column_stack([cy[:, 0], cz])
            lo, hi = float(target_y.min()), float(target_y.max())
        else:
            coef, lo, hi = coefficients[k]
        fitted[k] = (coef, lo, hi)
        pred = A @ coef
        const = np.clip(pred[:, 0], lo, hi)
        Z[:, k, :] = pred[:, 1:] / dt
        Y[:, k], iters[k], residuals[k] = _fixed_point(
            const, Z[:, k, :], times[k], gen, theta * dt, tol, max_iter, damping)
        if f_next is not None:
            realized += (1 - theta) * dt * f_next
        f_next = gen.driver(times[k], Y[:, k], Z[:, k, :])
        realized += theta * dt * f_next
    naive_se = float(realized.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(Z))):
        raise ConvergenceError("non-finite values in the discrete solution")
    diagnostics = {
        "iterations": iters,
        "residuals": residuals,
        "condition_numbers": conds,
        "ridge": ridge_used,
        "theta": THETA,
        "y0_std_error": _adjoint_std_error(gen, Y, Z, paths),
        "y0_std_error_naive": naive_se,
    }
    return Y, Z, diagnostics, fitted


def _validate(gen, paths, basis_degree, allow_nonminimal, kind="hermite"):
    if not gen.lipschitz and not allow_nonminimal:
        raise DomainError("driver is not Lipschitz; pass allow_nonminimal=True to accept that the "
                          "discrete fixed point may not be the minimal solution")
    if gen.beta * paths.grid.dt >= 1:
        raise StepSizeError(f"beta*dt = {gen.beta * paths.grid.dt} must be < 1")
    basis = make_basis(kind, basis_degree, paths.d)
    if paths.M < 10 * basis.size:
        raise DomainError(f"M={paths.M} too small for a basis of size {basis.size}")
    return basis


def solve(gen: GeneratorSpec, term: TerminalSpec, paths: PathEnsemble, basis_degree: int = 4,
          tol: float = 1e-12, max_iter: int = 200, damping: float = 1.0,
          allow_nonminimal: bool = False, basis: str = "hermite") -> SolutionField:
    regression = _validate(gen, paths, basis_degree, allow_nonminimal, basis)
    xi = term.evaluate(paths)
    Y, Z, diag, coefs = _backward(gen, xi, paths, regression, tol, max_iter, damping)
    return SolutionField(Y, Z, paths.grid, diag, coefs, basis_degree, paths.seed, basis)


def transfer(sol: SolutionField, gen: GeneratorSpec, term: TerminalSpec, paths: PathEnsemble,
             tol: float = 1e-12, max_iter: int = 200, damping: float = 1.0) -> SolutionField:
    """Re-evaluate a solution on another ensemble with its frozen regression coefficients.

    The result is the same deterministic function of the Brownian state, so two
    solutions fitted on independent ensembles can be compared path by path.
    """
    if sol.coefficients is None:
        raise DomainError("solution carries no regression coefficients")
    if paths.grid != sol.grid or paths.d != sol.d:
        raise DomainError("grid or dimension mismatch")
    regression = make_basis(sol.basis, sol.basis_degree, paths.d)
    Y, Z, diag, coefs = _backward(gen, term.evaluate(paths), paths, regression, tol, max_iter, damping,
                                  coefficients=sol.coefficients)
    diag["y0_std_error"] = sol.y0_std_error
    diag["transferred_from_seed"] = sol.seed
    return SolutionField(Y, Z, paths.grid, diag, coefs, sol.basis_degree, paths.seed, sol.basis)


def truncate_terminal(term: TerminalSpec, f0: Callable[[float], float], idx: TruncationIndex):
    """Return (xi^{n,p}, f0^{n,p}) with  v^{n,p} = min(v+, n) - min(v-, p)."""
    n, p = idx.n, idx.p

    def cut(v):
        v = np.asarray(v, dtype=float)
        return np.minimum(np.maximum(v, 0.0), n) - np.minimum(np.maximum(-v, 0.0), p)

    def xi_np(W):
        return cut(term.xi(W))

    def f0_np(t):
        return float(cut(f0(t)))

    desc = f"truncated({term.description}, n={n}, p={p})"
    return TerminalSpec(xi_np, desc), f0_np


def truncated_generator(gen: GeneratorSpec, idx: TruncationIndex) -> GeneratorSpec:
    """f^{n,p} = f - f0 + f0^{n,p}; the driver is reused verbatim where the intercept is not cut."""
    _, f0_np = truncate_terminal(TerminalSpec(lambda W: W[:, -1, 0]), gen.f0, idx)

    def driver(t, y, z):
        cut = f0_np(t)
        base = gen.f0(t)
        if cut == base:
            return gen.driver(t, y, z)
        return gen.driver(t, y, z) - base + cut

    return GeneratorSpec(gen.beta, gen.gamma, f0_np, driver, gen.lipschitz,
                         f"{gen.name}^({idx.n},{idx.p})", gen.check_dim, gen.check_T)


def solve_truncated(gen: GeneratorSpec, term: TerminalSpec, idx: TruncationIndex,
                    paths: PathEnsemble, basis_degree: int = 4, tol: float = 1e-12,
                    max_iter: int = 200, **kwargs) -> SolutionField:
    term_np, _ = truncate_terminal(term, gen.f0, idx)
    return solve(truncated_generator(gen, idx), term_np, paths, basis_degree, tol, max_iter, **kwargs)


def comparison_generator(gen: GeneratorSpec, idx: TruncationIndex) -> GeneratorSpec:
    """Dominating driver |f0^{n,p}(t)| + beta y + gamma |z|."""
    _, f0_np = truncate_terminal(TerminalSpec(lambda W: W[:, -1, 0]), gen.f0, idx)
    beta, gamma = gen.beta, gen.gamma

    def driver(t, y, z):
        return abs(f0_np(t)) + beta * y + gamma * _norm(z)

    return GeneratorSpec(beta, gamma, lambda t: abs(f0_np(t)), driver, True,
                         f"comparison[{gen.name}]^({idx.n},{idx.p})", gen.check_dim, gen.check_T)


def solve_comparison(gen: GeneratorSpec, term: TerminalSpec, idx: TruncationIndex,
                     paths: PathEnsemble, basis_degree: int = 4, tol: float = 1e-12,
                     max_iter: int = 200, **kwargs) -> SolutionField:
    term_np, _ = truncate_terminal(term, gen.f0, idx)
    abs_term = TerminalSpec(lambda W: np.abs(term_np.xi(W)), f"|{term_np.description}|")
    return solve(comparison_generator(gen, idx), abs_term, paths, basis_degree, tol, max_iter,
                 **kwargs)


def extract_sign_drift(sol: SolutionField, gamma: float, extension: bool = False) -> AdaptedDrift:
    """q = gamma * sgn(Z) with sgn(0) = 0.

    Only d = 1 is covered by the scalar sign; ``extension=True`` uses
    gamma * Z / |Z| (zero where Z vanishes) for d > 1.
    """
    if sol.d == 1:
        vals = gamma * np.sign(sol.Z)
    elif extension:
        warnings.warn("d > 1: using gamma * Z/|Z| as the sign drift", stacklevel=2)
        norms = _norm(sol.Z)[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = np.where(norms > 0, gamma * sol.Z / norms, 0.0)
    else:
        raise DomainError("sign drift is scalar; pass extension=True for d > 1")
    return AdaptedDrift(vals, gamma)
