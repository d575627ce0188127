"""Exact fractional Brownian motion on dyadic grids and its level-2 lift.

Paths are sampled by Cholesky factorization of the increment covariance,
linearly interpolated along dyadic subdivisions, and enhanced with the
iterated integrals of the piecewise-linear interpolant.  Level-2 data is
stored per consecutive grid cell; any other pair is rebuilt through Chen's
relation from a running prefix.
"""

from __future__ import annotations

import enum
import functools
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import linalg

__all__ = [
    "Regime",
    "HurstParam",
    "TimeGrid",
    "FbmSample",
    "PiecewiseLinearPath",
    "EnhancedDriver",
    "SamplingError",
    "fbm_covariance",
    "increment_autocovariance",
    "increment_covariance",
    "path_seed",
    "sample_fbm",
    "interpolate_dyadic",
    "levy_area",
    "refinement_gap",
    "holder_norm",
    "pairwise_sup",
    "matrix_norm",
]

JITTER = 1e-12
EXACT_PAIR_LIMIT = 4097


class SamplingError(RuntimeError):
    """Raised when the grid covariance cannot be factorized."""


class Regime(enum.Enum):
    YOUNG = "young"
    ROUGH = "rough"


@dataclass(frozen=True)
class HurstParam:
    h: float

    def __post_init__(self):
        if not (1.0 / 3.0 < self.h < 1.0):
            raise ValueError(f"Hurst parameter must lie in (1/3, 1), got {self.h}")

    @property
    def regime(self) -> Regime:
        # H = 1/2 needs level-2 data: gamma + gamma > 1 fails for every gamma < H
        return Regime.YOUNG if self.h > 0.5 else Regime.ROUGH

    @classmethod
    def coerce(cls, h: Union["HurstParam", float]) -> "HurstParam":
        return h if isinstance(h, HurstParam) else cls(float(h))


@dataclass(frozen=True)
class TimeGrid:
    """Dyadic grid ``t_i = i 2^{-level} T`` on ``[0, T]``."""

    level: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("grid level must be non-negative")
        if not (0.0 < self.horizon <= 1.0):
            raise ValueError(f"horizon must lie in (0, 1], got {self.horizon}")

    @property
    def n_cells(self) -> int:
        return 2 ** self.level

    @property
    def step(self) -> float:
        return self.horizon / self.n_cells

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.step

    def coarsen(self, level: int) -> "TimeGrid":
        if level > self.level:
            raise ValueError(f"cannot coarsen level {self.level} grid to level {level}")
        return TimeGrid(level, self.horizon)

    def stride(self, level: int) -> int:
        """Index stride of the level-``level`` subgrid inside this grid."""
        self.coarsen(level)
        return 2 ** (self.level - level)


@dataclass(frozen=True, eq=False)
class FbmSample:
    """Grid values of a d-dimensional path, component ``j`` in row ``j``.

    ``hurst`` is ``None`` for injected deterministic paths.
    """

    grid: TimeGrid
    values: np.ndarray
    hurst: Optional[HurstParam] = None
    seed: Optional[int] = None
    jitter: float = 0.0

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[1] != self.grid.n_cells + 1:
            raise ValueError(
                f"values have {values.shape[1]} columns, grid has {self.grid.n_cells + 1} points"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], grid: TimeGrid) -> "FbmSample":
        """Inject a deterministic path ``fn(t) -> (d, len(t))`` sampled on ``grid``."""
        values = np.atleast_2d(fn(grid.points))
        return cls(grid, values - values[:, :1])


def fbm_covariance(h: float, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``R(t, s) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    two_h = 2.0 * h
    return 0.5 * (np.abs(s) ** two_h + np.abs(t) ** two_h - np.abs(t - s) ** two_h)


def increment_autocovariance(h: float, grid: TimeGrid) -> np.ndarray:
    """``Cov(B_{t_1} - B_{t_0}, B_{t_{k+1}} - B_{t_k})`` for ``k = 0..n-1``."""
    k = np.arange(grid.n_cells, dtype=float)
    two_h = 2.0 * h
    return 0.5 * grid.step ** two_h * (
        np.abs(k + 1) ** two_h + np.abs(k - 1) ** two_h - 2.0 * k ** two_h
    )


def increment_covariance(h: float, grid: TimeGrid) -> np.ndarray:
    """Covariance of consecutive grid increments (stationary, Toeplitz)."""
    return linalg.toeplitz(increment_autocovariance(h, grid))


@functools.lru_cache(maxsize=6)
def _increment_factor(h: float, level: int, horizon: float) -> tuple[np.ndarray, float]:
    cov = increment_covariance(h, TimeGrid(level, horizon))
    try:
        factor = linalg.cholesky(cov, lower=True, check_finite=False)
        jitter = 0.0
    except linalg.LinAlgError:
        jitter = JITTER * float(np.max(np.diag(cov)))
        warnings.warn(
            f"increment covariance not numerically PSD at level {level}; adding jitter {jitter:.3g}",
            RuntimeWarning,
            stacklevel=3,
        )
        try:
            factor = linalg.cholesky(cov + jitter * np.eye(len(cov)), lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SamplingError(
                f"covariance factorization failed at level {level} even with jitter; reduce the level"
            ) from exc
    factor.setflags(write=False)
    return factor, jitter


def path_seed(base_seed: int, index: int) -> int:
    """Per-path 64-bit seed; extending an ensemble keeps its prefix."""
    ss = np.random.SeedSequence([int(base_seed) & (2**64 - 1), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_fbm(
    h: Union[HurstParam, float], d: int, grid: TimeGrid, seed: int
) -> FbmSample:
    """Exact sample of ``d`` independent fBm components on ``grid``."""
    hurst = HurstParam.coerce(h)
    if d < 1:
        raise ValueError("dimension must be at least 1")
    factor, jitter = _increment_factor(hurst.h, grid.level, grid.horizon)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((d, grid.n_cells))
    increments = noise @ factor.T
    values = np.zeros((d, grid.n_cells + 1))
    np.cumsum(increments, axis=1, out=values[:, 1:])
    return FbmSample(grid, values, hurst, seed, jitter)


@dataclass(frozen=True, eq=False)
class PiecewiseLinearPath:
    knots: np.ndarray
    values: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.knots, row) for row in self.values])


def interpolate_dyadic(sample: FbmSample, coarse_level: int) -> PiecewiseLinearPath:
    """Linear interpolation of ``sample`` through its level-``coarse_level`` nodes."""
    stride = sample.grid.stride(coarse_level)
    return PiecewiseLinearPath(sample.times[::stride], sample.values[:, ::stride])


def matrix_norm(a: np.ndarray) -> np.ndarray:
    """Spectral norm over the last two axes (batched)."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 1 and a.shape[-2] == 1:
        return np.abs(a[..., 0, 0])
    if a.shape[-2:] == (2, 2):
        # closed form: largest singular value of a 2x2 block
        p, q, r, s = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
        e = 0.5 * (p * p + q * q + r * r + s * s)
        det = p * s - q * r
        return np.sqrt(e + np.sqrt(np.maximum(e * e - det * det, 0.0)))
    return np.linalg.norm(a, ord=2, axis=(-2, -1))


def _euclidean(values: np.ndarray, value_ndim: int) -> np.ndarray:
    if value_ndim == 0:
        return np.abs(values)
    if value_ndim == 1:
        return np.sqrt(np.sum(values * values, axis=-1))
    return matrix_norm(values)


def pairwise_sup(
    n_points: int,
    times: np.ndarray,
    exponent: float,
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray],
    value_ndim: int,
    lo: int = 0,
    hi: Optional[int] = None,
    exact_limit: int = EXACT_PAIR_LIMIT,
) -> np.ndarray:
    """``max_{lo <= i < j <= hi} |evaluate(i, j)| / (t_j - t_i)^exponent``.

    ``evaluate`` receives index arrays and returns values whose last
    ``value_ndim`` axes form a vector or matrix; leading axes before the pair
    axis (for example an ensemble axis) are preserved in the result.  Beyond
    ``exact_limit`` points only dyadic gaps ``j - i = 2^k`` are visited.
    """
    hi = n_points - 1 if hi is None else hi
    if hi <= lo:
        raise ValueError("empty range for Hölder norm")
    span = hi - lo
    if span + 1 <= exact_limit:
        gaps = range(1, span + 1)
    else:
        gaps = [2**k for k in range(int(np.log2(span)) + 1)]
    best = None
    for g in gaps:
        i = np.arange(lo, hi - g + 1)
        j = i + g
        vals = _euclidean(evaluate(i, j), value_ndim)
        ratio = vals / (times[j] - times[i]) ** exponent
        cur = ratio.max(axis=-1)
        best = cur if best is None else np.maximum(best, cur)
    return best


def holder_norm(values, times, gamma: float, s: Optional[float] = None, t: Optional[float] = None) -> float:
    """Discrete Hölder semi-norm of grid values over ``[s, t]``.

    ``values`` has time on axis 0; remaining axes are measured with the
    Euclidean (vector) or spectral (matrix) norm.  On the grid this is
    exact, hence a lower bound for the continuum semi-norm.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    lo = 0 if s is None else int(np.searchsorted(times, s - 1e-14))
    hi = len(times) - 1 if t is None else int(np.searchsorted(times, t + 1e-14) - 1)
    return float(
        pairwise_sup(
            len(times), times, gamma, lambda i, j: values[j] - values[i], values.ndim - 1, lo, hi
        )
    )


def _segment_level2(increments: np.ndarray) -> np.ndarray:
    # iterated integral of a straight segment: half the outer product
    return 0.5 * increments[:, :, None] * increments[:, None, :]


@dataclass(frozen=True, eq=False)
class EnhancedDriver:
    """Piecewise-linear path on a dyadic grid together with its level-2 lift.

    ``path`` holds the interpolant evaluated on the sample grid and
    ``cell_level2`` the iterated integrals over each consecutive cell.
    """

    sample: FbmSample
    interpolation_level: int
    path: np.ndarray
    cell_level2: np.ndarray
    gamma: float

    @property
    def grid(self) -> TimeGrid:
        return self.sample.grid

    @property
    def times(self) -> np.ndarray:
        return self.sample.times

    @property
    def level(self) -> int:
        return self.grid.level

    @property
    def dim(self) -> int:
        return self.path.shape[0]

    @property
    def hurst(self) -> Optional[HurstParam]:
        return self.sample.hurst

    @functools.cached_property
    def increments(self) -> np.ndarray:
        """Cell increments, shape ``(n_cells, d)``."""
        return np.diff(self.path, axis=1).T

    @functools.cached_property
    def _prefix(self) -> np.ndarray:
        # B2_{0 t_k}, built by Chen from consecutive cells
        inc = self.increments
        shifted = (self.path - self.path[:, :1]).T[:-1]
        steps = self.cell_level2 + shifted[:, :, None] * inc[:, None, :]
        prefix = np.zeros((len(inc) + 1, self.dim, self.dim))
        np.cumsum(steps, axis=0, out=prefix[1:])
        return prefix

    def level1(self, i, j) -> np.ndarray:
        """``B^1_{t_i t_j}`` with shape ``(..., d)``."""
        i = np.asarray(i)
        j = np.asarray(j)
        return (self.path[:, j] - self.path[:, i]).T if i.ndim else self.path[:, j] - self.path[:, i]

    def level2(self, i, j) -> np.ndarray:
        """``B^2_{t_i t_j}`` reconstructed with Chen's relation, shape ``(..., d, d)``."""
        i = np.asarray(i)
        j = np.asarray(j)
        prefix = self._prefix
        base = self.path[:, 0]
        left = (self.path[:, i].T - base) if i.ndim else self.path[:, i] - base
        inc = self.level1(i, j)
        return prefix[j] - prefix[i] - left[..., :, None] * inc[..., None, :]

    def blocks(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Increments ``(2^level, d)`` and level-2 blocks ``(2^level, d, d)`` on a coarser grid."""
        stride = self.grid.stride(level)
        idx = np.arange(0, self.grid.n_cells + 1, stride)
        return self.level1(idx[:-1], idx[1:]), self.level2(idx[:-1], idx[1:])

    def chen_defect(self) -> float:
        """Max over grid triples of ``|B2_st - B2_su - B2_ut - B1_su (x) B1_ut|``."""
        n = self.grid.n_cells
        worst = 0.0
        for s in range(n - 1):
            u, t = np.triu_indices(n + 1 - s, k=1)
            u = u + s
            t = t + s
            keep = u > s
            u, t = u[keep], t[keep]
            if len(u) == 0:
                continue
            sv = np.full_like(u, s)
            d = (
                self.level2(sv, t)
                - self.level2(sv, u)
                - self.level2(u, t)
                - self.level1(sv, u)[:, :, None] * self.level1(u, t)[:, None, :]
            )
            worst = max(worst, float(np.max(np.abs(d))))
        return worst

    @property
    def scale(self) -> float:
        return float(max(1.0, np.max(np.abs(self.path - self.path[:, :1])) ** 2))

    def norm1(self, gamma: Optional[float] = None) -> float:
        gamma = self.gamma if gamma is None else gamma
        return float(pairwise_sup(len(self.times), self.times, gamma, self.level1, 1))

    def norm2(self, gamma: Optional[float] = None) -> float:
        """``||B^2||_{2 gamma}`` over grid pairs (spectral norm of each block)."""
        gamma = self.gamma if gamma is None else gamma
        return float(pairwise_sup(len(self.times), self.times, 2.0 * gamma, self.level2, 2))

    @functools.cached_property
    def norms(self) -> tuple[float, float]:
        return self.norm1(), self.norm2()

    def perturbed(self, start: int, component: int, eps: float) -> "EnhancedDriver":
        """Driver shifted by ``eps e_component`` on grid points after index ``start``."""
        values = np.array(self.path)
        values[component, start + 1 :] += eps
        sample = FbmSample(self.grid, values, self.sample.hurst, self.sample.seed, self.sample.jitter)
        return levy_area(sample, self.grid.level, self.gamma)


def levy_area(
    sample: FbmSample, interpolation_level: Optional[int] = None, gamma: Optional[float] = None
) -> EnhancedDriver:
    """Level-2 lift of the level-``interpolation_level`` dyadic interpolant.

    The interpolant is linear on each cell of the sample grid, so the
    iterated integral over a cell is half the outer product of its
    increment; longer pairs follow from Chen's relation.
    """
    level = sample.grid.level if interpolation_level is None else interpolation_level
    if level > sample.grid.level:
        raise ValueError(
            f"interpolation level {level} exceeds sample level {sample.grid.level}"
        )
    if gamma is None:
        gamma = sample.hurst.h - 0.05 if sample.hurst is not None else 0.95
    if level == sample.grid.level:
        path = np.array(sample.values)
    else:
        path = interpolate_dyadic(sample, level)(sample.times)
    path.setflags(write=False)
    increments = np.diff(path, axis=1).T
    return EnhancedDriver(sample, level, path, _segment_level2(increments), float(gamma))


def refinement_gap(sample: FbmSample, level: int, gamma: float) -> float:
    """``||B2^(level+1) - B2^(level)||_{2 gamma}`` over pairs of level-``(level+1)`` nodes."""
    fine = levy_area(sample, level + 1, gamma)
    coarse = levy_area(sample, level, gamma)
    idx = np.arange(0, sample.grid.n_cells + 1, sample.grid.stride(level + 1))
    times = sample.times[idx]

    def gap(i, j):
        return fine.level2(idx[i], idx[j]) - coarse.level2(idx[i], idx[j])

    return float(pairwise_sup(len(idx), times, 2.0 * gamma, gap, 2))
