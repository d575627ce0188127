"""Vector-field systems ``V_0, V_1, ..., V_d`` and their structure functions.

Points carry any number of leading batch axes; the last axis is the state.
The frame matrix ``V(x)`` holds ``V_j(x)`` in column ``j - 1``.  Structure
functions are returned as an array ``omega[..., i, j, k] = omega_ij^k`` for
``i = 0..d`` (``i = 0`` is the drift) and ``j, k = 1..d`` stored from 0, so
that ``[V_i, V_j] = sum_k omega_ij^k V_k`` with the bracket
``[V_i, V_j] = (DV_j) V_i - (DV_i) V_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .driver import matrix_norm

__all__ = [
    "VectorFieldSystem",
    "HypothesisReport",
    "fd_jacobian",
    "check_basis",
    "check_antisymmetry",
    "check_bracket",
    "check_ellipticity",
    "constants_MC",
    "hypothesis_report",
    "constant_frame",
    "linear_drift",
    "pendulum",
    "so3_frame",
    "geometric",
    "BUILTIN_SYSTEMS",
    "builtin_system",
    "levi_civita",
]

FD_STEP = 1e-5


def _fd_steps(x: np.ndarray, step: float) -> np.ndarray:
    return step * (1.0 + np.linalg.norm(x, axis=-1))


def fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian: ``out[..., *value_axes, b] = d fn / d x_b``."""
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x, step)
    cols = []
    for b in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[b] = 1.0
        shift = h[..., None] * e
        diff = fn(x + shift) - fn(x - shift)
        scale = (2.0 * h).reshape(h.shape + (1,) * (diff.ndim - h.ndim))
        cols.append(diff / scale)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class VectorFieldSystem:
    """Drift ``V_0`` and frame ``(V_1, ..., V_d)`` on ``R^d``.

    ``jacobian``, ``omega`` and ``omega_derivative`` are optional analytic
    callables; finite differences and least-squares bracket decomposition
    stand in when they are absent.
    """

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    frame: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    omega: Optional[Callable[[np.ndarray], np.ndarray]] = None
    omega_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    fd_step: float = FD_STEP

    def _point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"expected points with last axis {self.dim}, got shape {x.shape}")
        return x

    def fields(self, x) -> np.ndarray:
        """``(..., d + 1, d)``: row ``i`` is ``V_i(x)``, row 0 the drift."""
        x = self._point(x)
        v0 = np.broadcast_to(self.drift(x), x.shape)
        vs = np.swapaxes(np.broadcast_to(self.frame(x), x.shape + (self.dim,)), -1, -2)
        return np.concatenate([v0[..., None, :], vs], axis=-2)

    def jacobians(self, x, fd_step: Optional[float] = None) -> np.ndarray:
        """``(..., d + 1, d, d)`` with ``[..., i, a, b] = d_b V_i^a``."""
        x = self._point(x)
        if self.jacobian is not None and fd_step is None:
            return np.broadcast_to(self.jacobian(x), x.shape[:-1] + (self.dim + 1, self.dim, self.dim))
        return fd_jacobian(self.fields, x, self.fd_step if fd_step is None else fd_step)

    def brackets(self, x, fd_step: Optional[float] = None) -> np.ndarray:
        """``(..., d + 1, d + 1, d)`` with ``[..., i, j, :] = [V_i, V_j](x)``."""
        v = self.fields(x)
        dv = self.jacobians(x, fd_step)
        # (DV_j) V_i - (DV_i) V_j
        return np.einsum("...jab,...ib->...ija", dv, v) - np.einsum("...iab,...jb->...ija", dv, v)

    def structure(self, x) -> np.ndarray:
        """``omega[..., i, j, k]`` for ``i = 0..d`` and frame indices ``j, k``."""
        x = self._point(x)
        shape = x.shape[:-1] + (self.dim + 1, self.dim, self.dim)
        if self.omega is not None:
            return np.broadcast_to(self.omega(x), shape)
        rhs = self.brackets(x)[..., :, 1:, :]
        frame = np.broadcast_to(self.frame(x), x.shape + (self.dim,))
        return np.linalg.solve(frame[..., None, None, :, :], rhs[..., None])[..., 0]

    def structure_derivative(self, x) -> np.ndarray:
        """``(..., d, d + 1, d, d)``: derivative of ``omega_i`` along ``V_l`` at index ``[l, i]``."""
        x = self._point(x)
        if self.omega_derivative is not None:
            return np.broadcast_to(
                self.omega_derivative(x), x.shape[:-1] + (self.dim, self.dim + 1, self.dim, self.dim)
            )
        grad = fd_jacobian(self.structure, x, self.fd_step)
        frame = np.broadcast_to(self.frame(x), x.shape + (self.dim,))
        return np.einsum("...ijkb,...bl->...lijk", grad, frame)


@dataclass(frozen=True)
class HypothesisReport:
    min_singular_value: float
    antisymmetry_defect: float
    bracket_residual: float
    ellipticity: float
    M: float
    C: float

    @property
    def holds(self) -> bool:
        return self.min_singular_value > 0 and self.ellipticity > 0


def _points(system: VectorFieldSystem, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("empty point set")
    return pts.reshape(-1, system.dim)


def _frames(system: VectorFieldSystem, pts: np.ndarray) -> np.ndarray:
    return np.broadcast_to(system.frame(pts), pts.shape + (system.dim,))


def check_basis(system: VectorFieldSystem, points) -> float:
    """Smallest singular value of the frame over the sample."""
    pts = _points(system, points)
    return float(np.min(np.linalg.svd(_frames(system, pts), compute_uv=False)[..., -1]))


def check_antisymmetry(system: VectorFieldSystem, points) -> float:
    """``max |omega_ij^k + omega_ik^j|`` over ``i >= 1`` and the sample."""
    pts = _points(system, points)
    w = system.structure(pts)[..., 1:, :, :]
    return float(np.max(np.abs(w + np.swapaxes(w, -1, -2))))


def check_bracket(system: VectorFieldSystem, points, fd_step: Optional[float] = None) -> float:
    """``max |[V_i, V_j] - sum_k omega_ij^k V_k|`` over ``i = 0..d``, ``j = 1..d``."""
    pts = _points(system, points)
    br = system.brackets(pts, fd_step)[..., :, 1:, :]
    w = system.structure(pts)
    frame = _frames(system, pts)
    recon = np.einsum("...ijk,...ak->...ija", w, frame)
    return float(np.max(np.linalg.norm(br - recon, axis=-1)))


def check_ellipticity(system: VectorFieldSystem, points) -> float:
    """Smallest eigenvalue of ``V V^T`` over the sample."""
    pts = _points(system, points)
    v = _frames(system, pts)
    return float(np.min(np.linalg.eigvalsh(v @ np.swapaxes(v, -1, -2))[..., 0]))


def constants_MC(system: VectorFieldSystem, points) -> tuple[float, float]:
    """``M = max ||V(x)||^2`` and ``C = max ||omega_0(x)||`` (spectral norms)."""
    pts = _points(system, points)
    m = float(np.max(matrix_norm(_frames(system, pts)))) ** 2
    c = float(np.max(matrix_norm(system.structure(pts)[..., 0, :, :])))
    return m, c


def hypothesis_report(system: VectorFieldSystem, points) -> HypothesisReport:
    m, c = constants_MC(system, points)
    return HypothesisReport(
        check_basis(system, points),
        check_antisymmetry(system, points),
        check_bracket(system, points),
        check_ellipticity(system, points),
        m,
        c,
    )


def levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


def _zeros_like_structure(d: int):
    return lambda x: np.zeros(x.shape[:-1] + (d + 1, d, d))


def constant_frame(d: int = 1, frame=None, scale: float = 1.0, drift=None) -> VectorFieldSystem:
    """Constant frame (identity by default) with a constant drift."""
    v = scale * (np.eye(d) if frame is None else np.asarray(frame, dtype=float))
    b = np.zeros(d) if drift is None else np.broadcast_to(np.asarray(drift, dtype=float), (d,))
    zero = _zeros_like_structure(d)
    return VectorFieldSystem(
        d,
        drift=lambda x: np.broadcast_to(b, x.shape),
        frame=lambda x: np.broadcast_to(v, x.shape[:-1] + (d, d)),
        jacobian=zero,
        omega=zero,
        omega_derivative=lambda x: np.zeros(x.shape[:-1] + (d, d + 1, d, d)),
        name="constant-frame",
    )


def linear_drift(d: int = 1, kappa: float = 1.0) -> VectorFieldSystem:
    """Identity frame with mean-reverting drift ``V_0(x) = -kappa x``."""

    def jacobian(x):
        out = np.zeros(x.shape[:-1] + (d + 1, d, d))
        out[..., 0, :, :] = -kappa * np.eye(d)
        return out

    def omega(x):
        out = np.zeros(x.shape[:-1] + (d + 1, d, d))
        out[..., 0, :, :] = kappa * np.eye(d)
        return out

    return VectorFieldSystem(
        d,
        drift=lambda x: -kappa * x,
        frame=lambda x: np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)),
        jacobian=jacobian,
        omega=omega,
        omega_derivative=lambda x: np.zeros(x.shape[:-1] + (d, d + 1, d, d)),
        name="linear-drift",
    )


def pendulum(a: float = 1.0) -> VectorFieldSystem:
    """One-dimensional ``dX = -a sin(X) dt + dB``."""

    def jacobian(x):
        out = np.zeros(x.shape[:-1] + (2, 1, 1))
        out[..., 0, 0, 0] = -a * np.cos(x[..., 0])
        return out

    def omega(x):
        out = np.zeros(x.shape[:-1] + (2, 1, 1))
        out[..., 0, 0, 0] = a * np.cos(x[..., 0])
        return out

    def omega_derivative(x):
        out = np.zeros(x.shape[:-1] + (1, 2, 1, 1))
        out[..., 0, 0, 0, 0] = -a * np.sin(x[..., 0])
        return out

    return VectorFieldSystem(
        1,
        drift=lambda x: -a * np.sin(x),
        frame=lambda x: np.ones(x.shape[:-1] + (1, 1)),
        jacobian=jacobian,
        omega=omega,
        omega_derivative=omega_derivative,
        name="pendulum",
    )


def _hat(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape + (3,))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _so3_frame(theta: np.ndarray) -> np.ndarray:
    a = np.linalg.norm(theta, axis=-1)
    small = a < 1e-4
    safe = np.where(small, 1.0, a)
    beta = np.where(
        small,
        1.0 / 12.0 + a * a / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    k = _hat(theta)
    return np.eye(3) + 0.5 * k + beta[..., None, None] * (k @ k)


def so3_frame(scale: float = 1.0, drift_coeffs=None) -> VectorFieldSystem:
    """Left-invariant frame of the rotation group in exponential coordinates.

    Non-commuting fields with constant structure functions
    ``omega_ij^k = scale * eps_ijk``.  The optional drift is the constant
    combination ``sum_i b_i V_i``.  Valid while ``|x| < 2 pi``.
    """
    eps = levi_civita()
    b = np.zeros(3) if drift_coeffs is None else np.asarray(drift_coeffs, dtype=float)
    table = np.zeros((4, 3, 3))
    table[1:] = scale * eps
    table[0] = scale * np.einsum("i,ijk->jk", b, eps)

    def frame(x):
        return scale * _so3_frame(x)

    return VectorFieldSystem(
        3,
        drift=lambda x: frame(x) @ b,
        frame=frame,
        omega=lambda x: np.broadcast_to(table, x.shape[:-1] + table.shape),
        omega_derivative=lambda x: np.zeros(x.shape[:-1] + (3, 4, 3, 3)),
        name="so3",
    )


def geometric() -> VectorFieldSystem:
    """One-dimensional ``dX = X dB``, solved by ``X = x exp(B)``."""

    def jacobian(x):
        out = np.zeros(x.shape[:-1] + (2, 1, 1))
        out[..., 1, 0, 0] = 1.0
        return out

    return VectorFieldSystem(
        1,
        drift=lambda x: np.zeros_like(x),
        frame=lambda x: x[..., None],
        jacobian=jacobian,
        omega=_zeros_like_structure(1),
        omega_derivative=lambda x: np.zeros(x.shape[:-1] + (1, 2, 1, 1)),
        name="geometric",
    )


BUILTIN_SYSTEMS: Dict[str, Callable[..., VectorFieldSystem]] = {
    "constant-frame": constant_frame,
    "linear-drift": linear_drift,
    "pendulum": pendulum,
    "so3": so3_frame,
    "geometric": geometric,
}


def builtin_system(name: str, **params) -> VectorFieldSystem:
    try:
        factory = BUILTIN_SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(BUILTIN_SYSTEMS)}") from None
    return factory(**params)
