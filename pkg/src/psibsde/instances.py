"""Named catalogs of drivers, intercepts and terminal values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .errors import ConfigError
from .solver import GeneratorSpec, TerminalSpec, _norm


def _intercept(kind: str, value: float):
    if kind == "zero":
        return lambda t: 0.0
    if kind == "constant":
        return lambda t: value
    if kind == "linear_t":
        return lambda t: value * t
    raise ConfigError(f"unknown f0 selector {kind!r}; choose from {sorted(F0_KINDS)}")


F0_KINDS = {"zero", "constant", "linear_t"}


def _cusp(u):
    return u * np.maximum(0.0, 1.0 - np.sqrt(np.abs(u - 1.0)))


# name -> (builder(beta, gamma, f0) -> vectorized driver, lipschitz)
DRIVERS = {
    "zero": (lambda beta, gamma, f0: lambda t, y, z: np.full(y.shape, f0(t)), True),
    "linear_y": (lambda beta, gamma, f0: lambda t, y, z: f0(t) + beta * y, True),
    "abs_z": (lambda beta, gamma, f0: lambda t, y, z: f0(t) + gamma * _norm(z), True),
    "affine": (lambda beta, gamma, f0: lambda t, y, z: f0(t) + beta * y + gamma * z[:, 0], True),
    "linear_y_abs_z": (
        lambda beta, gamma, f0: lambda t, y, z: f0(t) + beta * y + gamma * _norm(z), True),
    "sin_y_abs_z": (
        lambda beta, gamma, f0: lambda t, y, z: f0(t) + beta * np.sin(y) + gamma * _norm(z), True),
    # continuous with linear growth, but infinite slope at |z| = 1
    "cusp_z": (
        lambda beta, gamma, f0: lambda t, y, z: f0(t) + gamma * _cusp(_norm(z)),
        False),
}


def make_generator(driver: str, beta: float, gamma: float, f0: str = "zero", f0_value: float = 0.0,
                   T: float = 1.0, d: int = 1) -> GeneratorSpec:
    if driver not in DRIVERS:
        raise ConfigError(f"unknown driver {driver!r}; choose from {sorted(DRIVERS)}")
    f0_fn = _intercept(f0, f0_value)
    build, lipschitz = DRIVERS[driver]
    return GeneratorSpec(beta, gamma, f0_fn, build(beta, gamma, f0_fn), lipschitz,
                         name=driver, check_dim=d, check_T=T)


TERMINALS = ("constant", "W_T", "abs_W_T", "exp_abs_W_T", "exp_W_T_sq")


def make_terminal(name: str, c: float = 1.0, T: float = 1.0) -> TerminalSpec:
    """Terminal value in the closed catalog; ``c`` is the constant or the exponent scale."""
    if name == "constant":
        return TerminalSpec(lambda W: np.full(W.shape[0], float(c)), f"xi = {c}")
    if name == "W_T":
        return TerminalSpec(lambda W: W[:, -1, 0].copy(), "xi = W_T")
    if name == "abs_W_T":
        return TerminalSpec(lambda W: np.abs(W[:, -1, 0]), "xi = |W_T|")
    if name == "exp_abs_W_T":
        return TerminalSpec(lambda W: np.exp(c * np.abs(W[:, -1, 0])), f"xi = exp({c}|W_T|)")
    if name == "exp_W_T_sq":
        if not 0 < c < 1.0 / (2.0 * T):
            raise ConfigError(f"exp_W_T_sq needs 0 < c < 1/(2T) = {1 / (2 * T)}, got {c}")
        return TerminalSpec(lambda W: np.exp(c * W[:, -1, 0] ** 2), f"xi = exp({c} W_T^2)")
    raise ConfigError(f"unknown terminal {name!r}; choose from {list(TERMINALS)}")


def integrated_abs_f0(gen: GeneratorSpec, times: np.ndarray) -> np.ndarray:
    """int_{t_k}^T |f0(s)| ds on the grid by the trapezoidal rule, for every k."""
    vals = np.abs(np.array([gen.f0(t) for t in times], dtype=float))
    pieces = 0.5 * (vals[1:] + vals[:-1]) * np.diff(times)
    out = np.zeros(len(times))
    out[:-1] = np.cumsum(pieces[::-1])[::-1]
    return out


@dataclass(frozen=True)
class Instance:
    name: str
    driver: str
    beta: float
    gamma: float
    terminal: str
    c: float = 1.0
    f0: str = "zero"
    f0_value: float = 0.0

    def build(self, T: float = 1.0):
        gen = make_generator(self.driver, self.beta, self.gamma, self.f0, self.f0_value, T)
        return gen, make_terminal(self.terminal, self.c, T)


# Regression instance suite: Lipschitz drivers with terminal values ranging from
# constants to exp(|W_T|) and exp(c W_T^2), all with finite psi_mu moments at
# mu = 2 gamma sqrt(T).
INSTANCE_SUITE = (
    Instance("linear_y_constant", "linear_y", 0.5, 0.5, "constant", 1.0),
    Instance("abs_z_W_T", "abs_z", 0.0, 0.5, "W_T"),
    Instance("affine_abs_W_T", "affine", 0.2, 0.5, "abs_W_T", f0="constant", f0_value=0.5),
    Instance("linear_y_abs_z_exp_abs_W_T", "linear_y_abs_z", 0.3, 0.5, "exp_abs_W_T", 1.0),
    Instance("sin_y_abs_z_abs_W_T", "sin_y_abs_z", 0.5, 1.0, "abs_W_T"),
    Instance("abs_z_exp_W_T_sq", "abs_z", 0.0, 0.25, "exp_W_T_sq", 0.2, f0="linear_t",
             f0_value=-1.0),
)


def closed_form_y0(driver: str, terminal: str, beta: float, gamma: float, f0: str, c: float,
                   T: float) -> float | None:
    """Y_0 for the catalog combinations with a known solution, else None."""
    if f0 != "zero":
        return None
    if terminal == "constant" and driver in ("zero", "abs_z"):
        return float(c)
    if terminal == "constant" and driver in ("linear_y", "linear_y_abs_z"):
        return float(c) * math.exp(beta * T)
    if terminal == "W_T" and driver == "zero":
        return 0.0
    if terminal == "W_T" and driver == "abs_z":
        # Y_t = W_t + gamma (T - t), Z = 1
        return gamma * T
    return None


def truncated_gaussian_mean(sigma: float, n: float, p: float) -> float:
    """E[min(X+, n) - min(X-, p)] for X ~ N(0, sigma^2), by quadrature of the tails."""
    upper, _ = integrate.quad(lambda x: stats.norm.sf(x / sigma), 0.0, n)
    lower, _ = integrate.quad(lambda x: stats.norm.sf(x / sigma), 0.0, p)
    return upper - lower
