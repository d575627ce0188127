"""Malliavin derivative ``M_s = D_s X_T`` of a solution, its bounds, and the Malliavin matrix.

``M`` solves the backward linear equation ``dM = M (W_0 ds + W_i dB^i)``
with ``M_T = V(X_T)``, where ``W_i`` is the transpose of the structure
matrix ``omega_i`` (``(W_i)_{kj} = omega_ij^k``).  Two discretizations are
offered: a backward product of per-cell matrix exponentials on the
driver's fine grid, and a second-order Davie-type step on the solver grid.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .driver import (
    EnhancedDriver,
    HurstParam,
    Regime,
    TimeGrid,
    holder_norm,
    increment_autocovariance,
    matrix_norm,
    pairwise_sup,
)
from .fields import VectorFieldSystem
from .solver import SolutionPath, SolverConfig, solve_many

__all__ = [
    "Method",
    "SkewExpReport",
    "DerivativeProcess",
    "MalliavinMatrix",
    "BoundReport",
    "skew_exp_check",
    "skew_exp_margins",
    "duhamel_residual",
    "propagate",
    "propagate_many",
    "deterministic_bound_check",
    "directional_oracle",
    "malliavin_matrix",
    "holder_bound_check",
]

SKEW_TOL = 1e-12


class Method(enum.Enum):
    EXP_PRODUCT = "exp-product"
    DAVIE = "davie"


@dataclass(frozen=True)
class SkewExpReport:
    norm_exp: float
    bound: float
    residual: float

    @property
    def margin(self) -> float:
        return self.bound - self.norm_exp


def _require_skew(a2: np.ndarray) -> None:
    defect = float(np.max(np.abs(a2 + np.swapaxes(a2, -1, -2)), initial=0.0))
    if defect > SKEW_TOL * max(1.0, float(np.max(np.abs(a2), initial=0.0))):
        raise ValueError(f"A2 is not skew-symmetric (defect {defect:.3g})")


def skew_exp_margins(a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """``e^{||A1||} - ||e^{A1 + A2}||`` for batches of matrices (spectral norms)."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    _require_skew(a2)
    return np.exp(matrix_norm(a1)) - matrix_norm(linalg.expm(a1 + a2))


def duhamel_residual(a1: np.ndarray, a2: np.ndarray, t: float = 1.0, quad_steps: int = 10_000) -> float:
    """``||e^{tA} - e^{tA2} - int_0^t e^{(t-s)A} A1 e^{sA2} ds||`` with ``A = A1 + A2``.

    The integral uses the composite midpoint rule.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    a = a1 + a2
    h = t / quad_steps
    s = (np.arange(quad_steps) + 0.5) * h
    left = linalg.expm((t - s)[:, None, None] * a)
    right = linalg.expm(s[:, None, None] * a2)
    integral = np.sum(left @ a1 @ right, axis=0) * h
    return float(matrix_norm(linalg.expm(t * a) - linalg.expm(t * a2) - integral))


def skew_exp_check(a1, a2, quad_steps: int = 10_000) -> SkewExpReport:
    """Norm of ``e^{A1 + A2}`` against ``e^{||A1||}`` for skew ``A2``, plus the Duhamel residual."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    _require_skew(a2)
    return SkewExpReport(
        float(matrix_norm(linalg.expm(a1 + a2))),
        float(np.exp(matrix_norm(a1))),
        duhamel_residual(a1, a2, 1.0, quad_steps),
    )


@dataclass(frozen=True, eq=False)
class DerivativeProcess:
    """Matrices ``M_s`` (column ``j`` is ``D^j_s X_T``) on a time grid.

    ``points`` are the states at which structure functions were evaluated.
    """

    times: np.ndarray
    matrices: np.ndarray
    method: Method
    points: np.ndarray

    @functools.cached_property
    def norm_profile(self) -> np.ndarray:
        return matrix_norm(self.matrices)

    @property
    def sup_norm(self) -> float:
        return float(np.max(self.norm_profile))

    @property
    def terminal(self) -> np.ndarray:
        return self.matrices[-1]

    def on(self, times) -> np.ndarray:
        """Matrices at a subset of the grid times."""
        idx = np.searchsorted(self.times, np.asarray(times) - 1e-12)
        if not np.allclose(self.times[idx], times, rtol=0, atol=1e-12):
            raise ValueError("requested times are not grid points of the process")
        return self.matrices[idx]


def _weights(system: VectorFieldSystem, x: np.ndarray) -> np.ndarray:
    # (W_i)_{kj} = omega_ij^k
    return np.swapaxes(system.structure(x), -1, -2)


def _backward(final: np.ndarray, factors: np.ndarray, inverse: bool) -> np.ndarray:
    n_paths, n_cells, d, _ = factors.shape
    out = np.empty((n_paths, n_cells + 1, d, d))
    out[:, -1] = final
    for k in range(n_cells - 1, -1, -1):
        if inverse:
            # M_k F_k = M_{k+1}
            out[:, k] = np.swapaxes(
                np.linalg.solve(np.swapaxes(factors[:, k], -1, -2), np.swapaxes(out[:, k + 1], -1, -2)), -1, -2
            )
        else:
            out[:, k] = out[:, k + 1] @ factors[:, k]
    return out


def _fine_states(solution: SolutionPath, fine_times: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(fine_times, solution.times, col) for col in solution.values.T], axis=-1)


def propagate_many(
    solutions: Sequence[SolutionPath],
    system: VectorFieldSystem,
    drivers: Sequence[EnhancedDriver],
    method: Method = Method.EXP_PRODUCT,
) -> list[DerivativeProcess]:
    """Backward propagation of ``M`` for a batch of solutions sharing one grid."""
    method = Method(method)
    if method is Method.EXP_PRODUCT:
        times = drivers[0].times
        states = np.stack([_fine_states(sol, times) for sol in solutions])
        w = _weights(system, states)
        w_mid = 0.5 * (w[:, :-1] + w[:, 1:])
        inc = np.stack([drv.increments for drv in drivers])
        dt = drivers[0].grid.step
        exponent = w_mid[:, :, 0] * dt + np.einsum("nkiab,nki->nkab", w_mid[:, :, 1:], inc)
        factors = linalg.expm(-exponent)
        if not np.all(np.isfinite(factors)):
            raise FloatingPointError("matrix exponential produced non-finite values")
        inverse = False
    else:
        times = solutions[0].times
        level = solutions[0].level
        states = np.stack([sol.values for sol in solutions])
        x = states[:, :-1]
        w = _weights(system, x)
        dw = np.swapaxes(system.structure_derivative(x), -1, -2)
        blocks = [drv.blocks(level) for drv in drivers]
        inc = np.stack([b[0] for b in blocks])
        l2 = np.stack([b[1] for b in blocks])
        dt = times[1] - times[0]
        d = system.dim
        second = np.einsum("nkiab,nkjbc->nkijac", w[:, :, 1:], w[:, :, 1:]) + dw[:, :, :, 1:]
        factors = (
            np.eye(d)
            + w[:, :, 0] * dt
            + np.einsum("nkiab,nki->nkab", w[:, :, 1:], inc)
            + np.einsum("nkijab,nkij->nkab", second, l2)
        )
        inverse = True
    final = np.broadcast_to(system.frame(states[:, -1]), (len(solutions), system.dim, system.dim))
    mats = _backward(np.array(final), factors, inverse)
    return [DerivativeProcess(times, m, method, s) for m, s in zip(mats, states)]


def propagate(
    solution: SolutionPath,
    system: VectorFieldSystem,
    driver: EnhancedDriver,
    method: Method = Method.EXP_PRODUCT,
) -> DerivativeProcess:
    """``M`` on the driver grid (exponential product) or the solver grid (Davie)."""
    return propagate_many([solution], system, [driver], method)[0]


@dataclass(frozen=True)
class BoundReport:
    bound: float
    bound_sqrt: float
    sup_norm: float

    @property
    def margin(self) -> float:
        return self.bound - self.sup_norm

    @property
    def margin_sqrt(self) -> float:
        return self.bound_sqrt - self.sup_norm


def deterministic_bound_check(process: DerivativeProcess, M: float, C: float, T: float) -> BoundReport:
    """``sup_s ||M_s||`` against ``M e^{CT}`` and against ``sqrt(M) e^{CT}``."""
    growth = float(np.exp(C * T))
    return BoundReport(M * growth, float(np.sqrt(M)) * growth, process.sup_norm)


def directional_oracle(
    system: VectorFieldSystem,
    driver: EnhancedDriver,
    s: float,
    j: Optional[int],
    eps: float,
    x0,
    config: SolverConfig = SolverConfig(),
) -> np.ndarray:
    """Finite-difference derivative of ``X_T`` when ``eps e_j`` is added to the driver after ``s``.

    The shift ramps up linearly over the driver cell starting at ``s``.
    With ``j = None`` all columns are returned as a matrix.
    """
    if driver.hurst is not None and driver.hurst.regime is Regime.ROUGH:
        raise ValueError("the pathwise derivative oracle needs a Young driver (h > 1/2)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    start = int(np.searchsorted(driver.times, s - 1e-12))
    if start >= driver.grid.n_cells:
        raise ValueError("s must lie before the horizon")
    cols = range(driver.dim) if j is None else [j]
    batch = [driver] + [driver.perturbed(start, c, eps) for c in cols]
    ends = np.stack([sol.terminal for sol in solve_many(system, batch, x0, config)])
    out = ((ends[1:] - ends[0]) / eps).T
    return out if j is None else out[:, 0]


@dataclass(frozen=True, eq=False)
class MalliavinMatrix:
    gamma: np.ndarray
    hurst: HurstParam
    l2_form: np.ndarray

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.gamma)[0])

    @property
    def l2_min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.l2_form)[0])


def malliavin_matrix(process: DerivativeProcess, hurst) -> MalliavinMatrix:
    """Pairing of the rows of ``M`` through the covariance of the driver's cell increments.

    ``M`` is read as a step function (left-point values on each cell); the
    scalar product of two cell indicators is the covariance of the
    corresponding fBm increments.
    """
    hurst = HurstParam.coerce(hurst)
    times = process.times
    n = len(times) - 1
    level = int(round(np.log2(n)))
    grid = TimeGrid(level, float(times[-1]))
    if 2**level != n or not np.allclose(times, grid.points):
        raise ValueError("malliavin_matrix needs a dyadic grid")
    rho = increment_autocovariance(hurst.h, grid)
    a = process.matrices[:-1]  # (n, a, j)
    gamma = np.zeros((a.shape[1], a.shape[1]))
    l2 = np.zeros_like(gamma)
    for j in range(a.shape[2]):
        rows = a[:, :, j]
        gamma += rows.T @ linalg.matmul_toeplitz((rho, rho), rows)
        l2 += rows.T @ rows * grid.step
    return MalliavinMatrix(0.5 * (gamma + gamma.T), hurst, l2)


def holder_bound_check(process: DerivativeProcess, driver: EnhancedDriver, x0) -> float:
    """``||M||_g / ((1 + |x| + ||B||_g^{1/g}) ||B||_g^{(1 - g)/g})``."""
    g = driver.gamma
    nb = float(pairwise_sup(len(driver.times), driver.times, g, driver.level1, 1))
    if nb == 0.0:
        return 0.0
    nm = holder_norm(process.matrices, process.times, g)
    factor = (1.0 + float(np.linalg.norm(x0)) + nb ** (1.0 / g)) * nb ** ((1.0 - g) / g)
    return nm / factor
