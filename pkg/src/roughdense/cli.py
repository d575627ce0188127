"""Command-line entry point: ``roughdense {sample,solve,malliavin,verify,sweep}``.

Settings are resolved as defaults < ``--config`` JSON < explicit flags.
Each run writes its resolved configuration to ``config.json`` next to the
artifacts.  Exit status: 0 when every requested check passes, 1 when one
fails, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .density import (
    Ensemble,
    InequalityReport,
    build_ensemble,
    concentration_check,
    envelope_check,
    estimate_density,
    fit_gaussian_envelope,
    fit_subgaussian_envelope,
    logsobolev_check,
    merge_ensembles,
    poincare_check,
    scaling_slope,
)
from .driver import HurstParam, Regime, TimeGrid, levy_area, path_seed, sample_fbm
from .fields import BUILTIN_SYSTEMS, VectorFieldSystem, builtin_system, constants_MC
from .malliavin import Method, deterministic_bound_check, malliavin_matrix, propagate
from .solver import ConfigError, Scheme, SolverConfig, solve

__all__ = ["RunConfig", "main", "resolve_config", "load_run_system"]

SEED_ENV = "ROUGHDENSE_SEED"
BOUND_TOL = 1e-8
CONCENTRATION_LEVELS = (0.5, 1.0, 1.5, 2.0)
ROUGH_DELTA = 0.3
SWEEP_TIMES = (0.125, 0.25, 0.5, 1.0)


@dataclass
class RunConfig:
    command: str
    h: float = 0.75
    T: float = 1.0
    level: int = 8
    N: int = 1
    seed: int = 0
    system: str = "constant-frame"
    x0: Optional[list] = None
    scheme: str = "davie"
    gamma: Optional[float] = None
    out: str = "roughdense-out"
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    checks: list = field(default_factory=list)

    def validate(self) -> None:
        def bad(name, reason):
            raise ConfigError(f"{name}: {reason}")

        if not 0.0 < self.h < 1.0:
            bad("h", f"must lie in (0, 1), got {self.h}")
        if not 0.0 < self.T <= 1.0:
            bad("T", f"must lie in (0, 1], got {self.T}")
        if self.level < 1:
            bad("level", f"must be at least 1, got {self.level}")
        if self.N < 1:
            bad("N", f"must be at least 1, got {self.N}")
        if self.threads < 1:
            bad("threads", f"must be at least 1, got {self.threads}")
        try:
            scheme = Scheme(self.scheme)
        except ValueError:
            bad("scheme", f"expected one of {[s.value for s in Scheme]}, got {self.scheme!r}")
        if scheme is Scheme.EULER and self.h <= 0.5:
            bad("scheme", f"euler ignores level-2 data and is invalid for h = {self.h} <= 1/2; use davie")
        if self.gamma is not None and not 0.0 < self.gamma < self.h:
            bad("gamma", f"must lie in (0, h), got {self.gamma}")
        if self.system not in BUILTIN_SYSTEMS and not Path(self.system).is_file():
            bad("system", f"{self.system!r} is neither a built-in name nor a file")

    @property
    def hurst(self) -> HurstParam:
        return HurstParam(self.h)

    @property
    def resolved_gamma(self) -> float:
        return self.h - 0.05 if self.gamma is None else self.gamma


COMMAND_DEFAULTS = {
    "sample": {"N": 1},
    "solve": {"N": 1},
    "malliavin": {"N": 1},
    "verify": {"N": 10_000, "level": 6},
    "sweep": {"N": 10_000, "level": 6},
}


def _parse_x0(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"x0: expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughdense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("sample", "sample fBm paths and their level-2 blocks"),
        ("solve", "solve the equation along sampled paths"),
        ("malliavin", "propagate the Malliavin derivative and form the Malliavin matrix"),
        ("verify", "run the Monte Carlo inequality suite"),
        ("sweep", "fit the Gaussian envelope constant over a range of horizons"),
    ]:
        p = sub.add_parser(name, help=help_text)
        # defaults are None so that only explicitly given flags override the config file
        p.add_argument("--h", type=float)
        p.add_argument("--T", type=float)
        p.add_argument("--level", type=int)
        p.add_argument("--N", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--system")
        p.add_argument("--x0", type=_parse_x0)
        p.add_argument("--scheme")
        p.add_argument("--gamma", type=float)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
        p.add_argument("--config", help="JSON file of settings; explicit flags take precedence")
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    values = dict(COMMAND_DEFAULTS[args.command])
    if environ.get(SEED_ENV):
        try:
            values["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"seed: {SEED_ENV}={environ[SEED_ENV]!r} is not an integer") from None
    known = {f.name for f in fields(RunConfig)} - {"command"}
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        values.update(loaded)
    values.update({k: v for k, v in vars(args).items() if k in known and v is not None})
    config = RunConfig(command=args.command, **values)
    config.validate()
    return config


def load_run_system(config: RunConfig) -> VectorFieldSystem:
    if config.system in BUILTIN_SYSTEMS:
        return builtin_system(config.system)
    return io.load_system(config.system)


def _x0(config: RunConfig, system: VectorFieldSystem) -> np.ndarray:
    if config.x0 is None:
        return np.zeros(system.dim)
    if len(config.x0) not in (1, system.dim):
        raise ConfigError(f"x0: expected {system.dim} values, got {len(config.x0)}")
    return np.broadcast_to(np.asarray(config.x0, dtype=float), (system.dim,)).copy()


def _drivers(config: RunConfig, dim: int):
    grid = TimeGrid(config.level, config.T)
    for i in range(config.N):
        sample = sample_fbm(config.hurst, dim, grid, path_seed(config.seed, i))
        yield i, sample, levy_area(sample, gamma=config.resolved_gamma)


def _echo(config: RunConfig, out: Path) -> None:
    echo = asdict(config)
    echo["gamma"] = config.resolved_gamma
    io.write_json(out / "config.json", echo)


def cmd_sample(config: RunConfig, out: Path) -> list[InequalityReport]:
    system_dim = load_run_system(config).dim
    for i, sample, driver in _drivers(config, system_dim):
        io.write_path(out / f"path_{i:05d}.csv", sample)
        io.write_level2(out / f"level2_{i:05d}.csv", driver)
    return []


def cmd_solve(config: RunConfig, out: Path) -> list[InequalityReport]:
    system = load_run_system(config)
    x0 = _x0(config, system)
    solver = SolverConfig(scheme=Scheme(config.scheme))
    for i, _, driver in _drivers(config, system.dim):
        io.write_solution(out / f"solution_{i:05d}.csv", solve(system, driver, x0, solver))
    return []


def cmd_malliavin(config: RunConfig, out: Path) -> list[InequalityReport]:
    system = load_run_system(config)
    x0 = _x0(config, system)
    solver = SolverConfig(scheme=Scheme(config.scheme))
    reports = []
    for i, _, driver in _drivers(config, system.dim):
        sol = solve(system, driver, x0, solver)
        proc = propagate(sol, system, driver, Method.EXP_PRODUCT)
        M, C = constants_MC(system, proc.points)
        bound = deterministic_bound_check(proc, M, C, config.T)
        gamma = malliavin_matrix(proc, config.hurst)
        io.write_derivative(out / f"derivative_{i:05d}.csv", proc)
        io.write_json(
            out / f"malliavin_{i:05d}.json",
            {
                "M": M,
                "C": C,
                "bound": bound.bound,
                "bound_sqrt": bound.bound_sqrt,
                "sup_norm": bound.sup_norm,
                "margin": bound.margin,
                "margin_sqrt": bound.margin_sqrt,
                "malliavin_matrix": gamma.gamma,
                "min_eigenvalue": gamma.min_eigenvalue,
                "l2_form": gamma.l2_form,
                "l2_min_eigenvalue": gamma.l2_min_eigenvalue,
            },
        )
        reports.append(
            InequalityReport("derivative-bound", bound.sup_norm, bound.bound + BOUND_TOL, 0.0, {"path": i, "M": M, "C": C})
        )
    return reports


def _ensemble(config: RunConfig, system: VectorFieldSystem, T: float, derivatives: bool) -> Ensemble:
    """Ensemble split into contiguous seed ranges; merged in index order."""
    workers = min(config.threads, config.N)
    bounds = np.linspace(0, config.N, workers + 1).astype(int)
    x0 = _x0(config, system)

    def run(k):
        lo, hi = bounds[k], bounds[k + 1]
        return build_ensemble(
            system, config.hurst, T, config.level, hi - lo, config.seed, x0, Scheme(config.scheme), derivatives, offset=lo
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, range(workers)))
    return merge_ensembles([p for p in parts if p.size > 0])


def _gaussian_fit(density, config, ensemble, T):
    d = ensemble.terminal.shape[1]
    c2 = float(np.linalg.norm(ensemble.x0))
    return fit_gaussian_envelope(density, config.hurst, T, c2, 2.0 * d * ensemble.M, ensemble.C)


def cmd_verify(config: RunConfig, out: Path) -> list[InequalityReport]:
    system = load_run_system(config)
    ens = _ensemble(config, system, config.T, derivatives=True)
    M, C, T = ens.M, ens.C, config.T
    reports = [
        InequalityReport(
            "derivative-bound", float(np.max(ens.derivative_sup)), M * np.exp(C * T) + BOUND_TOL, 0.0, {"M": M, "C": C}
        )
    ]
    scale = T**config.h
    reports += concentration_check(ens, config.hurst, M, C, T, [q * scale for q in CONCENTRATION_LEVELS])
    density = estimate_density(ens)
    if config.hurst.regime is Regime.YOUNG:
        params = _gaussian_fit(density, config, ens, T)
    else:
        params = fit_subgaussian_envelope(density, ROUGH_DELTA)
    reports.append(envelope_check(density, params, config.hurst, T))
    io.write_plot_data(out / "envelope.csv", density, params, config.hurst, T)
    if config.hurst.regime is Regime.YOUNG:
        tests = {
            "exp": (lambda x: np.exp(0.5 * x.sum(axis=1)), lambda x: 0.5 * np.exp(0.5 * x.sum(axis=1))[:, None] * np.ones_like(x)),
            "linear": (lambda x: x.sum(axis=1), lambda x: np.ones_like(x)),
        }
        for name, (f, g) in tests.items():
            for check in (logsobolev_check, poincare_check):
                rep = check(ens, f, g, M, C, T, config.hurst, seed=config.seed)
                reports.append(InequalityReport(f"{rep.name}-{name}", rep.lhs, rep.rhs, rep.stderr, rep.params))
    return reports


def cmd_sweep(config: RunConfig, out: Path) -> list[InequalityReport]:
    system = load_run_system(config)
    c1 = []
    for t in SWEEP_TIMES:
        ens = _ensemble(config, system, t, derivatives=False)
        density = estimate_density(ens)
        c1.append(_gaussian_fit(density, config, ens, t).c1)
    slope = scaling_slope(SWEEP_TIMES, c1)
    io.write_table(out / "sweep.csv", ["t", "c1"], zip(SWEEP_TIMES, c1))
    return [InequalityReport("envelope-scaling-slope", slope, 0.0, 0.0, {"t": list(SWEEP_TIMES), "c1": c1})]


COMMANDS = {
    "sample": cmd_sample,
    "solve": cmd_solve,
    "malliavin": cmd_malliavin,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo(config, out)
        reports = COMMANDS[config.command](config, out)
        if config.checks:
            reports = [r for r in reports if any(r.name.startswith(c) for c in config.checks)]
    except (ConfigError, ValueError) as err:
        print(f"roughdense: error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"roughdense: io error: {err}", file=sys.stderr)
        return 2
    if reports:
        io.write_reports(out / "reports.json", reports)
        for rep in reports:
            status = "PASS" if rep.verdict else "FAIL"
            print(f"{status} {rep.name}: lhs={float(rep.lhs)!r} rhs={float(rep.rhs)!r} stderr={float(rep.stderr)!r}")
    return 0 if all(rep.verdict for rep in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
