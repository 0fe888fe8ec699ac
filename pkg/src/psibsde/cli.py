"""Command line entry point: ``psibsde <subcommand> --config run.yaml``.

Exit codes: 0 success, 1 usage or hypothesis error, 2 a check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import COMMANDS, ExperimentConfig, from_dict, load
from .errors import (ConditioningError, ConfigError, ConvergenceError, DomainError, HypothesisError,
                     PsiBSDEError)
from .estimates import apriori_bound_check, class_D_diagnostic, default_family, proof_constant
from .instances import closed_form_y0, make_generator, make_terminal, truncated_gaussian_mean
from .kernel import AdaptedDrift, TimeGrid, gauss_moment_check, generate_paths, girsanov_weight
from .psi import critical_mu, default_split, sample_inequalities
from .solver import TruncationIndex, solve, solve_comparison, solve_truncated, transfer
from .uniqueness import (corrupt_pair, delta_representation_margin, linearize,
                         two_solver_agreement, uniform_integrability_margin, window_schedule)

log = logging.getLogger("psibsde")

OUTPUT_ENV = "PSIBSDE_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


class Run:
    """One subcommand execution: holds config, output directory and the manifest under way."""

    def __init__(self, cfg: ExperimentConfig, out: Path, jobs: int):
        self.cfg = cfg
        self.out = out
        self.jobs = jobs
        self.outputs: list[str] = []
        self.checks: dict[str, bool] = {}

    def csv(self, name, header, rows):
        self.outputs.append(write_csv(self.out / name, header, rows).name)

    def check(self, name, ok):
        self.checks[name] = bool(ok)
        log.info("%s: %s", name, "PASS" if ok else "FAIL")

    @property
    def ok(self):
        return all(self.checks.values())

    # shared builders
    def grid(self):
        return TimeGrid(self.cfg.grid.T, self.cfg.grid.n_steps)

    def paths(self, seed=None):
        e = self.cfg.ensemble
        return generate_paths(self.grid(), e.d, e.M, e.seed if seed is None else seed, jobs=self.jobs)

    def generator(self):
        g = self.cfg.generator
        return make_generator(g.driver, g.beta, g.gamma, g.f0, g.f0_value, self.cfg.grid.T,
                              self.cfg.ensemble.d)

    def terminal(self):
        return make_terminal(self.cfg.terminal.name, self.cfg.terminal.c, self.cfg.grid.T)

    def solve_kw(self):
        s = self.cfg.solver
        return {"basis": s.basis, "basis_degree": s.basis_degree, "tol": s.tol, "max_iter": s.max_iter}

    def require_mu(self):
        mu = self.cfg.effective_mu
        mu0 = critical_mu(self.cfg.generator.gamma, self.cfg.grid.T)
        if not mu > mu0:
            raise HypothesisError(f"mu={mu} must exceed gamma*sqrt(T)={mu0}")
        return mu


def cmd_psi_check(run: Run):
    pc = run.cfg.psi_check
    batches = sample_inequalities(pc.samples, pc.seed, pc.rel_tol)
    header = ["inequality", "index", "x", "param1", "param2", "param3", "margin", "log_ratio", "ok"]

    def rows():
        for b in batches:
            cols = list(b.params.values())
            x, rest = cols[0], cols[1:] + [np.full_like(cols[0], np.nan)] * (4 - len(cols))
            for i in range(len(x)):
                yield (b.name, i, x[i], rest[0][i], rest[1][i], rest[2][i], b.margin[i],
                       b.log_ratio[i], bool(b.ok[i]))

    run.csv("psi_check.csv", header, rows())
    for b in batches:
        run.check(f"psi:{b.name}", b.violations == 0)


def cmd_gauss_check(run: Run):
    gc = run.cfg.gauss_check
    paths = run.paths()
    grid = paths.grid
    vec = np.zeros(paths.d)
    vec[0] = gc.gamma
    q = AdaptedDrift.constant(paths, vec)
    rep = gauss_moment_check(paths, q, gc.mu, grid.step_of(gc.from_time))
    w = girsanov_weight(paths, q, 0, grid.n_steps)
    w_se = float(w.std(ddof=1) / math.sqrt(paths.M))
    w_mean = float(w.mean())
    run.csv("gauss_check.csv", ["check", "estimate", "bound", "std_error", "z_score", "ok"], [
        ("square_exponential_moment", rep.estimate, rep.bound, rep.std_error, rep.z_score,
         not rep.violation),
        ("girsanov_mean", w_mean, 1.0, w_se, (w_mean - 1.0) / w_se if w_se else 0.0,
         abs(w_mean - 1.0) <= 3 * w_se),
    ])
    run.check("gauss:moment_bound", not rep.violation)
    run.check("gauss:girsanov_mean", abs(w_mean - 1.0) <= 3 * w_se)


def _oracle(run: Run):
    g, t = run.cfg.generator, run.cfg.terminal
    return closed_form_y0(g.driver, t.name, g.beta, g.gamma, g.f0, t.c, run.cfg.grid.T)


def cmd_solve(run: Run):
    paths = run.paths()
    sol = solve(run.generator(), run.terminal(), paths, **run.solve_kw())
    oracle = _oracle(run)
    err = abs(sol.y0 - oracle) if oracle is not None else float("nan")
    run.csv("solve.csv", ["instance", "y0", "y0_std_error", "oracle_y0", "abs_error", "seed"],
            [(run.cfg.instance, sol.y0, sol.y0_std_error,
              oracle if oracle is not None else float("nan"), err, paths.seed)])
    times = paths.grid.times
    run.csv("solve_steps.csv", ["step_index", "time", "mean_y", "std_y", "mean_z", "rms_z",
                                "fixed_point_iterations"],
            [(k, times[k], sol.Y[:, k].mean(), sol.Y[:, k].std(),
              sol.Z[:, k, 0].mean() if k < len(times) - 1 else float("nan"),
              math.sqrt(np.mean(sol.Z[:, k, :] ** 2)) if k < len(times) - 1 else float("nan"),
              int(sol.diagnostics["iterations"][k]) if k < len(times) - 1 else 0)
             for k in range(len(times))])
    if oracle is not None:
        run.check("solve:oracle", err <= run.cfg.solver.oracle_tol)
    run.check("solve:terminal_consistency",
              bool(np.array_equal(sol.Y[:, -1], run.terminal().evaluate(paths))))


def cmd_truncation_ladder(run: Run):
    cfg = run.cfg
    paths = run.paths()
    gen, term, kw = run.generator(), run.terminal(), run.solve_kw()
    kw.update(basis=cfg.truncation.basis, basis_degree=cfg.truncation.basis_degree)
    pairs = [(int(n), int(p)) for p in cfg.truncation.p for n in cfg.truncation.n]

    def job(np_pair):
        idx = TruncationIndex(*np_pair)
        sol = solve_truncated(gen, term, idx, paths, **kw)
        bar = solve_comparison(gen, term, idx, paths, **kw)
        excess = float(np.max(np.abs(sol.Y) - bar.Y))
        return sol.y0, sol.y0_std_error, bar.y0, excess

    if run.jobs > 1:
        with ThreadPoolExecutor(max_workers=run.jobs) as pool:
            results = dict(zip(pairs, pool.map(job, pairs)))
    else:
        results = {pr: job(pr) for pr in pairs}
    has_oracle = (cfg.generator.driver == "zero" and cfg.generator.f0 == "zero"
                  and cfg.terminal.name == "W_T")
    sigma = math.sqrt(cfg.grid.T)
    rows, oracle_ok = [], True
    for (n, p), (y0, se, bar0, excess) in results.items():
        oracle = truncated_gaussian_mean(sigma, n, p) if has_oracle else float("nan")
        if has_oracle:
            oracle_ok &= abs(y0 - oracle) <= 3 * se
        rows.append((n, p, y0, se, oracle, bar0, excess))
    run.csv("truncation_ladder.csv",
            ["n", "p", "y0", "y0_std_error", "oracle_y0", "comparison_y0", "domination_excess"], rows)
    mono = True
    for (n, p), (y0, se, *_) in results.items():
        for (n2, p2), (y2, se2, *_) in results.items():
            slack = 3 * math.hypot(se, se2)
            if p2 == p and n2 > n:
                mono &= y2 >= y0 - slack
            if n2 == n and p2 > p:
                mono &= y2 <= y0 + slack
    run.check("ladder:monotone", mono)
    if has_oracle:
        run.check("ladder:oracle", oracle_ok)
    run.check("ladder:domination", max(r[-1] for r in rows) <= cfg.truncation.delta)


def cmd_bound_check(run: Run):
    mu = run.require_mu()
    paths = run.paths()
    gen, term = run.generator(), run.terminal()
    sol = solve(gen, term, paths, **run.solve_kw())
    rep = apriori_bound_check(sol, gen, term, mu, paths)
    run.csv("bound_check.csv", ["step_index", "time", "mean_margin", "min_margin", "violations"],
            rep.rows())
    run.check("bound:violations", rep.violation_count == 0)


def cmd_class_d(run: Run):
    mu = run.require_mu()
    paths = run.paths()
    gen, term = run.generator(), run.terminal()
    sol = solve(gen, term, paths, **run.solve_kw())
    split = default_split(mu, gen.gamma, paths.grid.T)
    family = default_family(np.abs(sol.Y), run.cfg.stopping.levels)
    rep = class_D_diagnostic(sol, split.a, family)
    const, const_se = proof_constant(gen, term, paths, mu, split)
    run.csv("class_d.csv", ["rule", "mean_psi_a", "std_error"],
            [(lab, rep.values[lab], rep.std_errors[lab]) for lab in family.labels])
    sup_se = rep.std_errors[rep.argmax]
    ok = rep.sup_estimate <= const + 3 * math.hypot(sup_se, const_se)
    run.csv("class_d_summary.csv",
            ["a", "b", "c", "mu", "sup_estimate", "argmax_rule", "proof_constant",
             "proof_constant_std_error", "ok"],
            [(split.a, split.b, split.c, mu, rep.sup_estimate, rep.argmax, const, const_se, ok)])
    run.check("class_d:sup_below_constant", ok)


def cmd_uniqueness(run: Run):
    cfg = run.cfg
    mu = cfg.effective_mu
    gen, term = run.generator(), run.terminal()
    if not gen.lipschitz:
        raise DomainError(f"uniqueness needs a Lipschitz driver, {gen.name!r} is not")
    p1, p2 = run.paths(cfg.ensemble.seed), run.paths(cfg.ensemble.seed2)
    kw = run.solve_kw()
    deg = kw.pop("basis_degree")
    agree = two_solver_agreement(gen, term, p1, p2, mu, (deg, cfg.solver.alt_degree), **kw)
    run.csv("uniqueness_agreement.csv",
            ["run", "y0", "y0_std_error"],
            [(k, agree.y0[k], agree.std_errors[k]) for k in agree.y0])
    run.csv("uniqueness_steps.csv", ["step_index", "time", "sup_abs_diff", "rms_abs_diff"],
            [(k, t, agree.sup_by_step[k], agree.rms_by_step[k]) for k, t in enumerate(p1.grid.times)])
    run.check("uniqueness:integrability", agree.integrability_ok)
    run.check("uniqueness:two_solver_agreement", agree.passed)

    s1 = solve(gen, term, p1, deg, **kw)
    s2 = transfer(solve(gen, term, p2, deg, **kw), gen, term, p1, tol=kw["tol"],
                  max_iter=kw["max_iter"])
    if cfg.uniqueness.negative_control:
        s1 = corrupt_pair(s1, cfg.uniqueness.negative_control)
    lin = linearize(gen, s1, s2)
    excess, resid = lin.check(gen, s1, s2)
    run.check("uniqueness:linearization", excess <= 1e-12 and resid <= 1e-12)
    family = default_family(np.abs(s1.Y) + np.abs(s2.Y), cfg.stopping.levels)
    grid = p1.grid
    start = min(grid.n_steps, math.ceil(cfg.uniqueness.window_start / grid.dt - 1e-9))
    delta = delta_representation_margin(s1, s2, lin, family, gen.beta, p1, start)
    run.csv("uniqueness_delta.csv", ["rule", "mean_margin", "min_margin", "q01_margin", "tolerance",
                                     "flagged"],
            [(r.label, r.mean_margin, r.min_margin, r.q01_margin, r.tolerance, r.flagged)
             for r in delta.rows])
    run.check("uniqueness:delta_representation", not delta.failed)

    if mu > critical_mu(gen.gamma, grid.T):
        a = default_split(mu, gen.gamma, grid.T).a
    else:
        # no admissible split; keep going with a small weight, the integrability check already failed
        a = mu / 4
    sched = window_schedule(a, gen.gamma, grid.T)
    run.csv("windows.csv", ["window", "start", "end"],
            [(i, lo, hi) for i, (lo, hi) in enumerate(sched.intervals)])
    run.check("uniqueness:window_cover", sched.covers(grid.T))
    ui_start = min(grid.n_steps, math.ceil((grid.T - sched.window_length) / grid.dt - 1e-9))
    ui = uniform_integrability_margin(s1, s2, lin, family, a, p1, max(ui_start, 0))
    run.csv("uniqueness_ui.csv",
            ["rule", "young_violations", "second_moment", "second_moment_std_error",
             "second_moment_bound", "psi_split_violations", "mean_psi_delta",
             "mean_psi_split_bound", "ok"],
            [(r.label, r.young_violations, r.second_moment, r.second_moment_se,
              r.second_moment_bound, r.psi_split_violations, r.mean_psi_delta,
              r.mean_psi_split_bound, r.ok) for r in ui.rows])
    run.check("uniqueness:uniform_integrability", ui.ok)


HANDLERS = {
    "psi-check": cmd_psi_check,
    "gauss-check": cmd_gauss_check,
    "solve": cmd_solve,
    "truncation-ladder": cmd_truncation_ladder,
    "bound-check": cmd_bound_check,
    "class-d": cmd_class_d,
    "uniqueness": cmd_uniqueness,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psibsde", description=__doc__.splitlines()[0])
    parser.add_argument("command", nargs="?", choices=COMMANDS,
                        help="subcommand; defaults to the config's 'command' field")
    parser.add_argument("--config", type=Path, help="YAML experiment config")
    parser.add_argument("--seed-override", type=int, help="replace ensemble.seed")
    parser.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV})")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _versions():
    return {"psibsde": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config) if args.config else from_dict({})
        command = args.command or cfg.command
        if command is None:
            raise ConfigError("no subcommand given on the command line or in the config")
        cfg.command = command
        if args.seed_override is not None:
            cfg.ensemble.seed = args.seed_override
            cfg.validate()
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"psibsde: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out or cfg.output_dir or os.environ.get(OUTPUT_ENV) or "psibsde-out")
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, out, args.jobs)
    manifest = {"command": command, "seed": cfg.ensemble.seed, "seed_override": args.seed_override,
                "jobs": args.jobs, "versions": _versions(), "config": cfg.to_dict()}
    try:
        HANDLERS[command](run)
        code = EXIT_OK if run.ok else EXIT_FAIL
        manifest["status"] = "pass" if run.ok else "fail"
    except (HypothesisError, DomainError, ConfigError) as exc:
        print(f"psibsde: {type(exc).__name__}: {exc}", file=sys.stderr)
        code, manifest["status"], manifest["error"] = EXIT_USAGE, "usage_error", str(exc)
    except (ConvergenceError, ConditioningError, PsiBSDEError) as exc:
        print(f"psibsde: {type(exc).__name__}: {exc}", file=sys.stderr)
        code, manifest["status"], manifest["error"] = EXIT_FAIL, "numerical_failure", str(exc)
    manifest.update(exit_code=code, checks=run.checks, outputs=run.outputs)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (out / "config.yaml").write_text(cfg.dump())
    for name, ok in run.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return code


if __name__ == "__main__":
    sys.exit(main())
