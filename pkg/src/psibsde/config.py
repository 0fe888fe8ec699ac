"""Experiment configuration: a sectioned YAML mapping with typed fields.

Unknown keys and ill-typed values raise ConfigError naming the offending
field (and the YAML line for syntax errors).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .instances import DRIVERS, F0_KINDS, TERMINALS
from .solver import BASES

COMMANDS = ("psi-check", "gauss-check", "solve", "truncation-ladder", "bound-check", "class-d",
            "uniqueness")


@dataclass
class GeneratorConfig:
    driver: str = "abs_z"
    beta: float = 0.0
    gamma: float = 0.5
    f0: str = "zero"
    f0_value: float = 0.0


@dataclass
class TerminalConfig:
    name: str = "W_T"
    c: float = 1.0


@dataclass
class GridConfig:
    T: float = 1.0
    n_steps: int = 100


@dataclass
class EnsembleConfig:
    d: int = 1
    M: int = 100_000
    seed: int = 7
    seed2: int = 8


@dataclass
class SolverConfig:
    basis: str = "hermite"
    basis_degree: int = 4
    alt_degree: int = 5
    tol: float = 1e-12
    max_iter: int = 200
    oracle_tol: float = 2e-2


@dataclass
class TruncationConfig:
    n: list = field(default_factory=lambda: [1, 2, 4, 8])
    p: list = field(default_factory=lambda: [1, 2, 4, 8])
    # regression used by the ladder; delta below was calibrated with it
    basis: str = "partition"
    basis_degree: int = 2
    # frozen comparison-domination tolerance (see tests/test_acceptance.py)
    delta: float = 1e-2


@dataclass
class StoppingConfig:
    levels: list = field(default_factory=lambda: [0.5 * 2.0**j for j in range(12)])


@dataclass
class PsiCheckConfig:
    samples: int = 100_000
    rel_tol: float = 1e-12
    seed: int = 20180101


@dataclass
class GaussCheckConfig:
    mu: float = 1.0
    gamma: float = 1.0
    from_time: float = 0.5


@dataclass
class UniquenessConfig:
    window_start: float = 0.0
    negative_control: float = 0.0


@dataclass
class ExperimentConfig:
    command: str | None = None
    instance: str = "default"
    mu: float | None = None
    output_dir: str | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    terminal: TerminalConfig = field(default_factory=TerminalConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    psi_check: PsiCheckConfig = field(default_factory=PsiCheckConfig)
    gauss_check: GaussCheckConfig = field(default_factory=GaussCheckConfig)
    uniqueness: UniquenessConfig = field(default_factory=UniquenessConfig)

    @property
    def effective_mu(self) -> float:
        """Configured mu, or twice the critical value gamma*sqrt(T)."""
        if self.mu is not None:
            return self.mu
        return 2.0 * self.generator.gamma * math.sqrt(self.grid.T)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def validate(self) -> "ExperimentConfig":
        g = self.generator
        if self.command is not None and self.command not in COMMANDS:
            raise ConfigError(f"command: unknown subcommand {self.command!r}")
        if g.driver not in DRIVERS:
            raise ConfigError(f"generator.driver: unknown driver {g.driver!r}")
        if g.f0 not in F0_KINDS:
            raise ConfigError(f"generator.f0: unknown selector {g.f0!r}")
        if self.solver.basis not in BASES:
            raise ConfigError(f"solver.basis: unknown basis {self.solver.basis!r}")
        if self.solver.basis == "partition" and self.ensemble.d != 1:
            raise ConfigError("solver.basis: the partition basis needs ensemble.d = 1")
        if self.truncation.basis not in BASES:
            raise ConfigError(f"truncation.basis: unknown basis {self.truncation.basis!r}")
        if self.terminal.name not in TERMINALS:
            raise ConfigError(f"terminal.name: unknown terminal {self.terminal.name!r}")
        checks = [
            ("generator.beta", g.beta >= 0), ("generator.gamma", g.gamma > 0),
            ("grid.T", self.grid.T > 0), ("grid.n_steps", self.grid.n_steps >= 1),
            ("ensemble.d", self.ensemble.d >= 1), ("ensemble.M", self.ensemble.M >= 1),
            ("ensemble.seed", 0 <= self.ensemble.seed < 2**64),
            ("ensemble.seed2", 0 <= self.ensemble.seed2 < 2**64),
            ("solver.basis_degree", 0 <= self.solver.basis_degree <= 12),
            ("solver.alt_degree", 0 <= self.solver.alt_degree <= 12),
            ("truncation.basis_degree", 0 <= self.truncation.basis_degree <= 12),
            ("solver.tol", self.solver.tol > 0), ("solver.max_iter", self.solver.max_iter >= 1),
            ("truncation.n", all(int(v) == v and v >= 1 for v in self.truncation.n)),
            ("truncation.p", all(int(v) == v and v >= 1 for v in self.truncation.p)),
            ("stopping.levels", all(v > 0 for v in self.stopping.levels)),
            ("psi_check.samples", self.psi_check.samples >= 1),
            ("gauss_check.gamma", self.gauss_check.gamma >= 0),
            ("gauss_check.mu", self.gauss_check.mu > 0),
            ("mu", self.mu is None or self.mu > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name}: value out of range")
        if self.terminal.name == "exp_W_T_sq" and not 0 < self.terminal.c < 1 / (2 * self.grid.T):
            raise ConfigError("terminal.c: exp_W_T_sq needs 0 < c < 1/(2T)")
        return self


def _coerce(value, hint: str, where: str):
    if value is None:
        if "None" in hint:
            return None
        raise ConfigError(f"{where}: null is not allowed")
    try:
        if hint.startswith("int"):
            if isinstance(value, bool) or not float(value).is_integer():
                raise ValueError
            return int(value)
        if hint.startswith("float"):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if hint.startswith("str"):
            if not isinstance(value, str):
                raise ValueError
            return value
        if hint == "list":
            if not isinstance(value, list):
                raise ValueError
            return [float(v) if isinstance(v, float) else v for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {hint}, got {value!r}") from None
    return value


def _build(cls, data, where=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or '<root>'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in fields:
            raise ConfigError(f"{path}: unknown field")
        hint = fields[key].type
        sub = next((c for c in (GeneratorConfig, TerminalConfig, GridConfig, EnsembleConfig,
                                SolverConfig, TruncationConfig, StoppingConfig, PsiCheckConfig,
                                GaussCheckConfig, UniquenessConfig) if c.__name__ == hint), None)
        kwargs[key] = _build(sub, value, path) if sub else _coerce(value, hint, path)
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}).validate()


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"malformed YAML{line}: {getattr(exc, 'problem', exc)}") from None
    return from_dict(data)
