"""The weight family psi(x, mu) = x * exp(mu * sqrt(2 log(1 + x))) and its inequalities.

Every quantity is available in log-space. Direct evaluation is used while the
result is representable in double precision; beyond that the value saturates
to +inf and the corresponding inequality is decided by comparing logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasibleSplitError

# log(max double); anything above saturates to +inf.
LOG_MAX = math.log(np.finfo(np.float64).max)


def _check_mu(mu, name="mu"):
    mu_arr = np.asarray(mu, dtype=float)
    if np.any(~(mu_arr > 0)) or np.any(~np.isfinite(mu_arr)):
        raise DomainError(f"{name} must be positive and finite, got {mu!r}")
    return mu_arr


def _check_nonneg(x, name="x"):
    x_arr = np.asarray(x, dtype=float)
    if np.any(~(x_arr >= 0)):
        raise DomainError(f"{name} must be nonnegative, got {x!r}")
    return x_arr


def _out(arr):
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr


def critical_mu(gamma: float, T: float) -> float:
    """Integrability threshold gamma * sqrt(T) below which existence can fail."""
    if not (gamma > 0 and T > 0):
        raise DomainError(f"gamma and T must be positive, got gamma={gamma}, T={T}")
    return gamma * math.sqrt(T)


def _log_psi_of_log(log_x, mu):
    # log(1 + x) computed from log(x) so that x itself never has to exist.
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        log1p_x = np.logaddexp(0.0, log_x)
        return np.where(np.isneginf(log_x), -np.inf, log_x + mu * np.sqrt(2.0 * log1p_x))


def log_psi(x, mu):
    """Natural logarithm of psi(x, mu); -inf at x = 0."""
    x = _check_nonneg(x)
    mu = _check_mu(mu)
    with np.errstate(divide="ignore"):
        return _out(_log_psi_of_log(np.log(x), mu))


def psi(x, mu):
    """psi(x, mu) for x >= 0, mu > 0 (vectorized).

    Returns +inf once the value exceeds the double range.

    >>> psi(0.0, 1.0)
    0.0
    >>> round(psi(1.0, 1.0), 12)
    3.245956352705
    """
    x = _check_nonneg(x)
    mu = _check_mu(mu)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        expo = mu * np.sqrt(2.0 * np.log1p(x))
        direct = x * np.exp(expo)
        logged = np.log(x) + expo
        val = np.where(np.isfinite(direct), direct, np.where(logged > LOG_MAX, np.inf, np.exp(logged)))
    return _out(val)


# Generic machinery: an inequality  small <= sum(big terms)  given in logs.

def _log_sum(*log_terms):
    out = log_terms[0]
    for lt in log_terms[1:]:
        out = np.logaddexp(out, lt)
    return out


def _margin_from_logs(log_big_terms, log_small):
    """big - small, computed with a common scale; saturates to +-inf past the double range.

    Returns (margin, log_ratio) with log_ratio = log(big) - log(small).
    """
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        log_big = _log_sum(*log_big_terms)
        log_ratio = log_big - log_small
        log_ratio = np.where(np.isneginf(log_small) & np.isneginf(log_big), 0.0, log_ratio)
        scale = np.maximum(log_big, log_small)
        finite_scale = np.where(np.isfinite(scale), scale, 0.0)
        scaled = sum(np.exp(t - finite_scale) for t in log_big_terms) - np.exp(log_small - finite_scale)
        margin = scaled * np.exp(finite_scale)
        saturated = scale > LOG_MAX - 1.0
        margin = np.where(saturated, np.where(log_ratio >= 0, np.inf, -np.inf), margin)
        margin = np.where(np.isneginf(scale), 0.0, margin)
    return margin, log_ratio


def _young_logs(x, y, mu):
    with np.errstate(divide="ignore"):
        log_y = np.log(y)
    big = (x * x / (2.0 * mu * mu), 2.0 * mu * mu + _log_psi_of_log(log_y, mu))
    small = x + log_y
    return big, small


def young_gap(x, y, mu):
    """exp(x^2/(2 mu^2)) + exp(2 mu^2) psi(y, mu) - exp(x) y, which is never negative.

    When a term exceeds the double range the gap is reported as +inf (or -inf
    if the log-level comparison fails).
    """
    x = np.asarray(x, dtype=float)
    y = _check_nonneg(y, "y")
    mu = _check_mu(mu)
    big, small = _young_logs(x, y, mu)
    return _out(_margin_from_logs(big, small)[0])


def _submult_logs(c, x, mu):
    with np.errstate(divide="ignore"):
        log_x = np.log(x)
        big = (_log_psi_of_log(np.log(c), mu) + _log_psi_of_log(log_x, mu),)
        small = _log_psi_of_log(np.log(c) + log_x, mu)
    return big, small


def submultiplicativity_margin(c, x, mu):
    """psi(c, mu) psi(x, mu) - psi(c x, mu), defined for c > 1."""
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 1)):
        raise DomainError(f"c must exceed 1, got {c!r}")
    x = _check_nonneg(x)
    mu = _check_mu(mu)
    big, small = _submult_logs(c, x, mu)
    return _out(_margin_from_logs(big, small)[0])


@dataclass(frozen=True)
class PsiSplit:
    """Decomposition mu = a + b + c used to pass from psi_b o psi_a to psi_mu."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"split component {name} must be positive, got {v}")

    @property
    def mu(self) -> float:
        return self.a + self.b + self.c

    def validate(self, gamma: float, T: float) -> None:
        if not self.b > critical_mu(gamma, T):
            raise InfeasibleSplitError(
                f"b={self.b} must exceed gamma*sqrt(T)={critical_mu(gamma, T)}"
            )


def _composition_logs(x, a, b, c):
    with np.errstate(divide="ignore"):
        log_x = np.log(x)
    big = (a * b * b / c + _log_psi_of_log(log_x, a + b + c),)
    small = _log_psi_of_log(_log_psi_of_log(log_x, a), b)
    return big, small


def composition_margin(x, split: PsiSplit):
    """exp(a b^2 / c) psi(x, a+b+c) - psi(psi(x, a), b)."""
    if not isinstance(split, PsiSplit):
        raise DomainError(f"expected a PsiSplit, got {split!r}")
    x = _check_nonneg(x)
    big, small = _composition_logs(x, split.a, split.b, split.c)
    return _out(_margin_from_logs(big, small)[0])


def default_split(mu: float, gamma: float, T: float) -> PsiSplit:
    """Symmetric admissible split: a = c = (mu - mu0)/4, b = (mu + mu0)/2."""
    _check_mu(mu)
    mu0 = critical_mu(gamma, T)
    if not mu > mu0:
        raise InfeasibleSplitError(f"mu={mu} must exceed the critical value {mu0}")
    slack = (mu - mu0) / 4.0
    split = PsiSplit(a=slack, b=(mu + mu0) / 2.0, c=slack)
    split.validate(gamma, T)
    return split


# Randomized verification used by the psi-check command and the tests.

INEQUALITIES = ("young", "submultiplicativity", "composition", "convexity")


@dataclass
class InequalitySample:
    """One randomized batch for one inequality.

    `params` holds the sampled arguments column-wise; `ok` is the pass flag
    at the relative tolerance the batch was checked with.
    """

    name: str
    params: dict
    margin: np.ndarray
    log_ratio: np.ndarray
    ok: np.ndarray

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.ok))


def _log_uniform(rng, low, high, size):
    return np.exp(rng.uniform(math.log(low), math.log(high), size))


def sample_inequalities(n: int = 100_000, seed: int = 20180101, rel_tol: float = 1e-12,
                        x_max: float = 1e6, param_max: float = 5.0) -> list[InequalitySample]:
    """Check every psi inequality on `n` seeded log-uniform inputs each.

    An inequality small <= big passes when small <= (1 + rel_tol) big, which is
    evaluated at log level so saturated cases are still decided.
    """
    rng = np.random.default_rng(seed)
    log_tol = math.log1p(rel_tol)
    out = []

    def lu(low, high):
        return _log_uniform(rng, low, high, n)

    # Young-type duality; x ranges over the whole line.
    x = lu(1e-6, x_max) * rng.choice([-1.0, 1.0], n)
    y, mu = lu(1e-6, x_max), lu(1e-3, param_max)
    y[: n // 100] = 0.0
    big, small = _young_logs(x, y, mu)
    margin, lr = _margin_from_logs(big, small)
    out.append(InequalitySample("young", {"x": x, "y": y, "mu": mu}, margin, lr, lr >= -log_tol))

    c = 1.0 + lu(1e-6, x_max)
    xs, mu = lu(1e-6, x_max), lu(1e-3, param_max)
    xs[: n // 100] = 0.0
    big, small = _submult_logs(c, xs, mu)
    margin, lr = _margin_from_logs(big, small)
    out.append(InequalitySample("submultiplicativity", {"x": xs, "c": c, "mu": mu}, margin, lr,
                                lr >= -log_tol))

    xs = lu(1e-6, x_max)
    xs[: n // 100] = 0.0
    a, b, cc = lu(1e-3, param_max), lu(1e-3, param_max), lu(1e-3, param_max)
    big, small = _composition_logs(xs, a, b, cc)
    margin, lr = _margin_from_logs(big, small)
    out.append(InequalitySample("composition", {"x": xs, "a": a, "b": b, "c": cc}, margin, lr,
                                lr >= -log_tol))

    x1, x2 = lu(1e-6, x_max), lu(1e-6, x_max)
    lam, mu = rng.uniform(0.0, 1.0, n), lu(1e-3, param_max)
    lhs = psi(lam * x1 + (1 - lam) * x2, mu)
    p1, p2 = psi(x1, mu), psi(x2, mu)
    rhs = lam * p1 + (1 - lam) * p2
    margin = rhs - lhs
    with np.errstate(divide="ignore"):
        lr = np.log(rhs) - np.log(lhs)
    ok = margin >= -rel_tol * np.maximum(lhs, rhs)
    out.append(InequalitySample("convexity", {"x": x1, "x2": x2, "lambda": lam, "mu": mu},
                                margin, lr, ok))
    return out
