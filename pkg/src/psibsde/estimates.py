"""A-priori bound on |Y| and the class (D) diagnostic for psi_a(|Y|)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, HypothesisError
from .instances import integrated_abs_f0
from .kernel import PathEnsemble
from .psi import LOG_MAX, PsiSplit, critical_mu, psi
from .solver import GeneratorSpec, SolutionField, TerminalSpec, least_squares, make_basis

# Absolute slack for |Y| above the bound. Calibrated on the constant and W_T
# instances, where the smallest observed margin is O(1).
BOUND_TOLERANCE = 1e-6

DEFAULT_LEVELS = tuple(0.5 * 2.0**j for j in range(12))


@dataclass
class StoppingFamily:
    """Named stopping rules; ``indices[label]`` is the per-path stopping step."""

    indices: dict = field(default_factory=dict)
    parameterization: str = ""

    @property
    def labels(self) -> list:
        return list(self.indices)

    @classmethod
    def hitting_times(cls, process: np.ndarray, levels=DEFAULT_LEVELS) -> "StoppingFamily":
        """tau_L = first step with process >= L, capped at the last step.

        Each index only looks at the process up to the hitting step.
        """
        n_last = process.shape[1] - 1
        fam = {}
        for level in levels:
            hit = process >= level
            first = np.where(hit.any(axis=1), hit.argmax(axis=1), n_last)
            fam[f"hit>={level:g}"] = first.astype(np.int64)
        return cls(fam, f"level hitting times, levels={list(levels)}")

    @classmethod
    def deterministic(cls, M: int, steps) -> "StoppingFamily":
        fam = {f"t_step={int(k)}": np.full(M, int(k), dtype=np.int64) for k in steps}
        return cls(fam, f"deterministic steps {list(map(int, steps))}")

    def union(self, other: "StoppingFamily") -> "StoppingFamily":
        merged = dict(self.indices)
        merged.update(other.indices)
        desc = " + ".join(p for p in (self.parameterization, other.parameterization) if p)
        return StoppingFamily(merged, desc)

    def validate(self, M: int, n_steps: int) -> None:
        for label, idx in self.indices.items():
            if idx.shape != (M,) or idx.min() < 0 or idx.max() > n_steps:
                raise DomainError(f"stopping rule {label!r} is not a valid index array")


def default_family(process: np.ndarray, levels=DEFAULT_LEVELS) -> StoppingFamily:
    """Level-hitting times of ``process`` plus every deterministic grid time."""
    M, n1 = process.shape
    return StoppingFamily.hitting_times(process, levels).union(
        StoppingFamily.deterministic(M, range(n1)))


@dataclass
class BoundReport:
    times: np.ndarray
    mean_margin: np.ndarray
    min_margin: np.ndarray
    violations: np.ndarray
    mu: float
    tolerance: float
    estimator: str

    @property
    def violation_count(self) -> int:
        return int(self.violations.sum())

    def rows(self):
        for k, t in enumerate(self.times):
            yield k, t, self.mean_margin[k], self.min_margin[k], int(self.violations[k])


def _conditional_expectation(values, state, t, basis):
    A = basis.design(state, t)
    coef, _, _ = least_squares(A, values[:, None])
    return (A @ coef)[:, 0]


def apriori_bound_check(sol: SolutionField, gen: GeneratorSpec, term: TerminalSpec, mu: float,
                        paths: PathEnsemble, tolerance: float = BOUND_TOLERANCE) -> BoundReport:
    """Compare |Y_t| with

        e^{beta(T-t)} / sqrt(1 - gamma^2 (T-t)/mu^2)
            + e^{2 mu^2 + beta(T-t)} E[psi_mu(|xi| + int_t^T |f0|) | F_t]

    on every path and grid time. The conditional expectation is a regression
    on the solver's basis, floored at its deterministic lower bound.
    """
    T, beta, gamma = paths.grid.T, gen.beta, gen.gamma
    if not mu > critical_mu(gamma, T):
        raise HypothesisError(f"mu={mu} must exceed gamma*sqrt(T)={critical_mu(gamma, T)}")
    times = paths.grid.times
    xi_abs = np.abs(term.evaluate(paths))
    tail = integrated_abs_f0(gen, times)
    if not np.isfinite(np.mean(psi(xi_abs + tail[0], mu))):
        raise HypothesisError("psi_mu(|xi| + int |f0|) has no finite ensemble mean")
    basis = make_basis(sol.basis, sol.basis_degree, paths.d)
    N = paths.grid.n_steps
    mean_m, min_m, viol = np.empty(N + 1), np.empty(N + 1), np.zeros(N + 1, dtype=int)
    for k in range(N + 1):
        tau = T - times[k]
        target = psi(xi_abs + tail[k], mu)
        if k == N:
            cond = target
        else:
            cond = _conditional_expectation(target, paths.W[:, k, :], times[k], basis)
        cond = np.maximum(cond, psi(tail[k], mu))
        with np.errstate(divide="ignore"):
            log_first = beta * tau - 0.5 * math.log1p(-(gamma**2) * tau / mu**2)
            log_second = 2 * mu**2 + beta * tau + np.log(cond)
        log_rhs = np.logaddexp(log_first, log_second)
        y_abs = np.abs(sol.Y[:, k])
        with np.errstate(over="ignore"):
            margin = np.where(log_rhs > LOG_MAX, np.inf, np.exp(np.minimum(log_rhs, LOG_MAX)) - y_abs)
        mean_m[k] = float(np.mean(margin))
        min_m[k] = float(np.min(margin))
        viol[k] = int(np.count_nonzero(margin < -tolerance))
    return BoundReport(times, mean_m, min_m, viol, float(mu), tolerance,
                       f"least-squares regression on the {sol.basis} basis of degree {sol.basis_degree} "
                       f"in W_t/sqrt(t), floored at psi_mu(int_t^T |f0|)")


@dataclass
class ClassDReport:
    a: float
    values: dict
    std_errors: dict

    @property
    def sup_estimate(self) -> float:
        return max(self.values.values())

    @property
    def argmax(self) -> str:
        return max(self.values, key=self.values.get)


def class_D_diagnostic(sol: SolutionField, a: float, family: StoppingFamily) -> ClassDReport:
    """Ensemble mean of psi_a(|Y_tau|) for every stopping rule in the family."""
    if not a > 0:
        raise DomainError(f"a must be positive, got {a}")
    family.validate(sol.M, sol.grid.n_steps)
    rows = np.arange(sol.M)
    values, ses = {}, {}
    for label, idx in family.indices.items():
        sample = psi(np.abs(sol.Y[rows, idx]), a)
        values[label] = float(sample.mean())
        ses[label] = float(sample.std(ddof=1) / math.sqrt(sol.M)) if sol.M > 1 else 0.0
    return ClassDReport(float(a), values, ses)


def proof_constant(gen: GeneratorSpec, term: TerminalSpec, paths: PathEnsemble, mu: float,
                   split: PsiSplit):
    """psi_a(e^{beta T}) (1/sqrt(1 - gamma^2 T / b^2) + e^{2b^2 + ab^2/c} E psi_mu(|xi| + int_0^T |f0|)).

    Returns (estimate, standard error); the expectation is an ensemble mean.
    """
    T, beta, gamma = paths.grid.T, gen.beta, gen.gamma
    a, b, c = split.a, split.b, split.c
    split.validate(gamma, T)
    tail0 = integrated_abs_f0(gen, paths.grid.times)[0]
    sample = psi(np.abs(term.evaluate(paths)) + tail0, mu)
    lead = psi(math.exp(beta * T), a)
    factor = math.exp(2 * b * b + a * b * b / c)
    mean = float(sample.mean())
    se = float(sample.std(ddof=1) / math.sqrt(paths.M)) if paths.M > 1 else 0.0
    value = lead * (1.0 / math.sqrt(1.0 - gamma**2 * T / b**2) + factor * mean)
    return value, lead * factor * se

