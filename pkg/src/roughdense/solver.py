"""Davie and Euler schemes for ``dX = V_0(X) dt + V_i(X) dB^i``, plus pathwise integrals.

A step of the Davie scheme on a cell ``[t_k, t_{k+1}]`` reads

    X_{k+1} = X_k + V_0 dt + V_i B1^i + (DV_j V_i) B2^{ij}

where ``B2^{ij}`` integrates ``dB^i`` before ``dB^j``.  The Euler scheme
drops the last term and is only accepted for Young drivers.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .driver import EnhancedDriver, Regime, holder_norm, pairwise_sup
from .fields import VectorFieldSystem, fd_jacobian
from .increments import Increment, delta_path, product, sew

__all__ = [
    "Scheme",
    "SolverConfig",
    "ConfigError",
    "SolutionPath",
    "ControlledPath",
    "solve",
    "solve_many",
    "davie_steps",
    "young_integral",
    "rough_integral",
    "controlled_compose",
    "apriori_check",
    "growth_ratio",
    "dyadic_slope",
]


class ConfigError(ValueError):
    """Inconsistent solver or run configuration."""


class Scheme(enum.Enum):
    EULER = "euler"
    DAVIE = "davie"


@dataclass(frozen=True)
class SolverConfig:
    """``level`` is the solver grid level; ``None`` uses the driver's own grid."""

    level: Optional[int] = None
    scheme: Scheme = Scheme.DAVIE

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    def validate(self, driver: EnhancedDriver) -> int:
        level = driver.level if self.level is None else self.level
        if level > driver.level:
            raise ConfigError(f"solver level {level} exceeds driver level {driver.level}")
        if self.scheme is Scheme.EULER and driver.hurst is not None and driver.hurst.regime is Regime.ROUGH:
            raise ConfigError(
                f"scheme: euler ignores level-2 data and is invalid for h = {driver.hurst.h} <= 1/2; use davie"
            )
        return level


def davie_steps(
    system: VectorFieldSystem,
    x0: np.ndarray,
    increments: np.ndarray,
    level2: Optional[np.ndarray],
    dt: float,
) -> np.ndarray:
    """Run the scheme on a batch: ``increments (N, n, d)``, ``level2 (N, n, d, d)`` or ``None``.

    Returns states of shape ``(N, n + 1, d)``.
    """
    n_paths, n_cells, d = increments.shape
    values = np.empty((n_paths, n_cells + 1, d))
    values[:, 0] = x0
    for k in range(n_cells):
        x = values[:, k]
        v = system.fields(x)
        step = v[:, 0] * dt + np.einsum("nia,ni->na", v[:, 1:], increments[:, k])
        if level2 is not None:
            dv = system.jacobians(x)[:, 1:]
            # (DV_j V_i)^a B2^{ij}
            step = step + np.einsum("njab,nib,nij->na", dv, v[:, 1:], level2[:, k])
        values[:, k + 1] = x + step
        if not np.all(np.isfinite(values[:, k + 1])):
            raise FloatingPointError(f"non-finite state at step {k}")
    return values


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """Grid values of ``X`` with its controlled decomposition ``zeta = V(X)``."""

    times: np.ndarray
    values: np.ndarray
    frame: np.ndarray
    driver_values: np.ndarray
    gamma: float
    scheme: Scheme

    @property
    def level(self) -> int:
        return int(round(np.log2(len(self.times) - 1)))

    @property
    def x0(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def remainder(self, i=None, j=None) -> np.ndarray:
        """``dX_st - zeta_s B1_st``; consecutive cells by default."""
        if i is None:
            i = np.arange(len(self.times) - 1)
            j = i + 1
        dx = self.values[j] - self.values[i]
        db = self.driver_values[j] - self.driver_values[i]
        return dx - np.einsum("...ai,...i->...a", self.frame[i], db)

    @functools.cached_property
    def holder_norm(self) -> float:
        return holder_norm(self.values, self.times, self.gamma)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=-1)))


def _solver_inputs(driver: EnhancedDriver, level: int, scheme: Scheme):
    inc, l2 = driver.blocks(level)
    return inc, (l2 if scheme is Scheme.DAVIE else None)


def _wrap(system, driver, level, values, scheme) -> SolutionPath:
    stride = driver.grid.stride(level)
    frame = np.broadcast_to(system.frame(values), values.shape + (system.dim,))
    return SolutionPath(
        driver.times[::stride],
        values,
        np.array(frame),
        driver.path[:, ::stride].T.copy(),
        driver.gamma,
        scheme,
    )


def solve(
    system: VectorFieldSystem, driver: EnhancedDriver, x0, config: SolverConfig = SolverConfig()
) -> SolutionPath:
    """Solve on the level-``config.level`` subgrid of the driver."""
    return solve_many(system, [driver], x0, config)[0]


def solve_many(
    system: VectorFieldSystem,
    drivers: Sequence[EnhancedDriver],
    x0,
    config: SolverConfig = SolverConfig(),
) -> list[SolutionPath]:
    """Solve a batch of drivers sharing one grid, stepping all paths together."""
    if not drivers:
        return []
    levels = {config.validate(drv) for drv in drivers}
    if len(levels) != 1:
        raise ConfigError("drivers in a batch must share the solver level")
    level = levels.pop()
    if drivers[0].dim != system.dim:
        raise ConfigError(f"driver dimension {drivers[0].dim} does not match system dimension {system.dim}")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (system.dim,))
    parts = [_solver_inputs(drv, level, config.scheme) for drv in drivers]
    inc = np.stack([p[0] for p in parts])
    l2 = None if parts[0][1] is None else np.stack([p[1] for p in parts])
    dt = drivers[0].grid.coarsen(level).step
    values = davie_steps(system, x0, inc, l2, dt)
    return [_wrap(system, drv, level, vals, config.scheme) for drv, vals in zip(drivers, values)]


def young_integral(times, g, f, gamma: float, kappa: float) -> Increment:
    """``int g df`` as the limit of Riemann sums of ``g_s (f_t - f_s)``."""
    if gamma + kappa <= 1.0:
        raise ValueError(f"Young integration needs gamma + kappa > 1, got {gamma + kappa}")
    times = np.asarray(times, dtype=float)
    return sew(product(np.asarray(g, dtype=float), delta_path(times, f), times=times), gamma + kappa)


def rough_integral(m, mu, driver: EnhancedDriver) -> Increment:
    """Compensated Riemann sums of ``m_s^i B1^i_st + mu_s^{i j} B2^{j i}_st``.

    ``m`` has shape ``(n + 1, ..., d)`` and ``mu`` shape ``(n + 1, ..., d, d)``
    on the driver grid; leading value axes are kept in the result.
    """
    m = np.asarray(m, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if m.shape[0] != len(driver.times) or mu.shape[0] != len(driver.times):
        raise ValueError("coefficients must live on the driver grid")

    def germ(s, t):
        s, t = np.broadcast_arrays(s, t)
        b1 = driver.level1(s, t)
        b2 = driver.level2(s, t)
        first = np.einsum("k...i,ki->k...", m[s].reshape((-1,) + m.shape[1:]), b1.reshape(-1, driver.dim))
        second = np.einsum(
            "k...ij,kji->k...", mu[s].reshape((-1,) + mu.shape[1:]), b2.reshape(-1, driver.dim, driver.dim)
        )
        return (first + second).reshape(s.shape + m.shape[1:-1])

    return sew(Increment(driver.times, 2, germ, m.shape[1:-1]), 3.0 * driver.gamma)


@dataclass(frozen=True, eq=False)
class ControlledPath:
    """``z`` with ``dz_st = coef_s B1_st + remainder_st``."""

    times: np.ndarray
    values: np.ndarray
    coef: np.ndarray
    driver_values: np.ndarray

    def remainder(self, i=None, j=None) -> np.ndarray:
        if i is None:
            i = np.arange(len(self.times) - 1)
            j = i + 1
        dz = self.values[j] - self.values[i]
        db = self.driver_values[j] - self.driver_values[i]
        return dz - np.einsum("...ai,...i->...a", self.coef[i], db)


def controlled_compose(
    f: Callable[[np.ndarray], np.ndarray],
    z: SolutionPath,
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    fd_step: float = 1e-5,
) -> ControlledPath:
    """``f(z)`` as a controlled path with coefficient ``Df(z) zeta``."""
    values = np.asarray(f(z.values), dtype=float)
    if values.ndim == 1:
        values = values[:, None]
        grad = jacobian(z.values) if jacobian is not None else fd_jacobian(f, z.values, fd_step)
        grad = np.asarray(grad).reshape(len(z.times), 1, -1)
    else:
        grad = jacobian(z.values) if jacobian is not None else fd_jacobian(f, z.values, fd_step)
    coef = np.einsum("kpa,kai->kpi", grad, z.frame)
    return ControlledPath(z.times, values, coef, z.driver_values)


def dyadic_slope(times, pair_values: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """Least-squares slope of ``log2 max |r_st|`` against ``log2 (t - s)`` over dyadic scales.

    Uses cells of levels ``m/2 .. m-2`` on a level-``m`` grid.
    """
    n = len(times) - 1
    m = int(round(np.log2(n)))
    xs, ys = [], []
    for level in range(max(1, m // 2), m - 1):
        stride = 2 ** (m - level)
        i = np.arange(0, n, stride)
        vals = np.asarray(pair_values(i, i + stride))
        mag = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals.reshape(len(i), -1), axis=-1)
        xs.append(np.log2(times[stride] - times[0]))
        ys.append(np.log2(np.max(mag)))
    if len(xs) < 2:
        raise ValueError("grid too coarse for a slope estimate")
    return float(np.polyfit(xs, ys, 1)[0])


def apriori_check(solution: SolutionPath, driver: EnhancedDriver) -> float:
    """``||X||_g / (1 + ||B1||_g^{1/g} + ||B2||_{2g}^{1/(2g)})``."""
    g = solution.gamma
    n1, n2 = driver.norms
    return solution.holder_norm / (1.0 + n1 ** (1.0 / g) + n2 ** (1.0 / (2.0 * g)))


def growth_ratio(solution: SolutionPath, driver: EnhancedDriver, beta: float) -> float:
    """``(sup |X| - |x|) / ||B||_beta^{1/beta}``, bounded over ensembles."""
    nb = float(pairwise_sup(len(driver.times), driver.times, beta, driver.level1, 1))
    excess = solution.sup_norm - float(np.linalg.norm(solution.x0))
    return excess / nb ** (1.0 / beta) if nb > 0 else 0.0
