"""Increments on grids: the coboundary ``delta``, products, Hölder norms, sewing.

A rank-``k`` increment is a function of ``k`` grid times (``k = 1`` is a
path).  Increments are represented by an evaluator on integer grid indices,
so values are assembled on demand from whatever compact data backs them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .driver import pairwise_sup

__all__ = [
    "Increment",
    "HolderReport",
    "SewingError",
    "delta",
    "delta_path",
    "delta_inc",
    "product",
    "norm_c2",
    "norm_c3",
    "sew",
    "dyadic_sums",
    "iterated_integral2",
]

CAUCHY_RTOL = 1e-12


class SewingError(ArithmeticError):
    """Dyadic Riemann sums do not form a Cauchy sequence."""


@dataclass(frozen=True, eq=False)
class Increment:
    """Function of ``rank`` grid times, evaluated on index arrays.

    ``evaluate(i1, ..., ik)`` broadcasts over its index arguments and
    returns values with trailing shape ``value_shape``.
    """

    times: np.ndarray
    rank: int
    evaluate: Callable[..., np.ndarray]
    value_shape: tuple = ()

    def __call__(self, *idx) -> np.ndarray:
        if len(idx) != self.rank:
            raise TypeError(f"rank-{self.rank} increment takes {self.rank} indices")
        return self.evaluate(*(np.asarray(i) for i in idx))

    @property
    def n_points(self) -> int:
        return len(self.times)

    @classmethod
    def from_path(cls, times, values) -> "Increment":
        """Path with time on axis 0 of ``values``."""
        values = np.asarray(values, dtype=float)
        return cls(np.asarray(times, dtype=float), 1, lambda i: values[i], values.shape[1:])

    @classmethod
    def from_table(cls, times, table, rank: int) -> "Increment":
        """Dense table indexed by the first ``rank`` axes."""
        table = np.asarray(table, dtype=float)
        return cls(np.asarray(times, dtype=float), rank, lambda *idx: table[idx], table.shape[rank:])

    @classmethod
    def from_cells(cls, times, cells) -> "Increment":
        """Additive rank-2 increment whose consecutive-cell values are ``cells``."""
        cells = np.asarray(cells, dtype=float)
        prefix = np.zeros((len(cells) + 1,) + cells.shape[1:])
        np.cumsum(cells, axis=0, out=prefix[1:])
        return cls(np.asarray(times, dtype=float), 2, lambda s, t: prefix[t] - prefix[s], cells.shape[1:])

    def table(self) -> np.ndarray:
        """Dense values on all index tuples (small grids only)."""
        n = self.n_points
        grids = np.meshgrid(*([np.arange(n)] * self.rank), indexing="ij")
        return self.evaluate(*grids)

    def cells(self) -> np.ndarray:
        """Values on consecutive pairs ``(k, k + 1)``."""
        if self.rank != 2:
            raise ValueError("consecutive-cell values need a rank-2 increment")
        k = np.arange(self.n_points - 1)
        return self.evaluate(k, k + 1)

    def __add__(self, other: "Increment") -> "Increment":
        _check_compatible(self, other)
        f, g = self.evaluate, other.evaluate
        return Increment(self.times, self.rank, lambda *i: f(*i) + g(*i), self.value_shape)

    def __sub__(self, other: "Increment") -> "Increment":
        _check_compatible(self, other)
        f, g = self.evaluate, other.evaluate
        return Increment(self.times, self.rank, lambda *i: f(*i) - g(*i), self.value_shape)

    def scaled(self, c: float) -> "Increment":
        f = self.evaluate
        return Increment(self.times, self.rank, lambda *i: c * f(*i), self.value_shape)


def _check_compatible(a: Increment, b: Increment) -> None:
    if a.rank != b.rank:
        raise ValueError(f"rank mismatch: {a.rank} vs {b.rank}")
    if a.n_points != b.n_points:
        raise ValueError("increments live on different grids")


@dataclass(frozen=True)
class HolderReport:
    exponents: tuple
    value: float

    @property
    def split(self) -> Optional[tuple]:
        return self.exponents if len(self.exponents) == 2 else None


def delta(g: Increment) -> Increment:
    """Coboundary: alternating sum over the omitted argument."""
    k = g.rank
    f = g.evaluate

    def evaluate(*idx):
        total = None
        for omit in range(k + 1):
            sign = -1.0 if (k - omit - 1) % 2 else 1.0
            term = f(*(idx[:omit] + idx[omit + 1 :]))
            total = sign * term if total is None else total + sign * term
        return total

    return Increment(g.times, k + 1, evaluate, g.value_shape)


def delta_path(times, values) -> Increment:
    """``(delta g)_{st} = g_t - g_s`` for a path given on the grid."""
    return delta(Increment.from_path(times, values))


def delta_inc(h: Increment) -> Increment:
    """``(delta h)_{sut} = h_{st} - h_{su} - h_{ut}``."""
    if h.rank != 2:
        raise ValueError("delta_inc expects a rank-2 increment")
    return delta(h)


def _as_increment(x, times=None) -> Increment:
    if isinstance(x, Increment):
        return x
    if times is None:
        raise TypeError("paths given as arrays need a time grid")
    return Increment.from_path(times, x)


def product(g, h, times=None) -> Increment:
    """``(gh)_{t_1..t_{n+m-1}} = g_{t_1..t_n} h_{t_n..t_{n+m-1}}``.

    Values multiply with numpy broadcasting.  Arrays are read as paths on
    ``times``.
    """
    if times is None:
        times = next((x.times for x in (g, h) if isinstance(x, Increment)), None)
    g = _as_increment(g, times)
    h = _as_increment(h, times)
    rank = g.rank + h.rank - 1
    if rank > 3:
        raise ValueError(f"product rank {rank} exceeds 3")
    if g.n_points != h.n_points:
        raise ValueError("increments live on different grids")
    n, f1, f2 = g.rank, g.evaluate, h.evaluate
    shape = np.broadcast_shapes(g.value_shape, h.value_shape)

    def pad(values, lead, value_shape):
        return values.reshape(lead + (1,) * (len(shape) - len(value_shape)) + value_shape)

    def evaluate(*idx):
        idx = np.broadcast_arrays(*idx)
        lead = idx[0].shape
        a = pad(np.asarray(f1(*idx[:n])), lead, g.value_shape)
        b = pad(np.asarray(f2(*idx[n - 1 :])), lead, h.value_shape)
        return a * b

    return Increment(g.times, rank, evaluate, shape)


def _value_norm(values: np.ndarray, value_ndim: int) -> np.ndarray:
    if value_ndim == 0:
        return np.abs(values)
    flat = values.reshape(values.shape[: values.ndim - value_ndim] + (-1,))
    return np.sqrt(np.sum(flat * flat, axis=-1))


def norm_c2(f: Increment, mu: float) -> HolderReport:
    """``sup_{s<t} |f_st| / |t - s|^mu`` over grid pairs."""
    if f.rank != 2:
        raise ValueError("norm_c2 expects a rank-2 increment")
    if not (0.0 < mu < 2.0):
        raise ValueError("exponent must lie in (0, 2)")
    value = pairwise_sup(f.n_points, f.times, mu, f.evaluate, len(f.value_shape))
    return HolderReport((mu,), float(value))


def norm_c3(h: Increment, gamma: float, rho: float) -> HolderReport:
    """``sup_{s<u<t} |h_sut| / (|u - s|^gamma |t - u|^rho)`` over grid triples."""
    if h.rank != 3:
        raise ValueError("norm_c3 expects a rank-3 increment")
    if not (0.0 < gamma < 2.0 and 0.0 < rho < 2.0):
        raise ValueError("exponents must lie in (0, 2)")
    n, times = h.n_points, h.times
    best = 0.0
    ndim = len(h.value_shape)
    for u in range(1, n - 1):
        s, t = np.meshgrid(np.arange(u), np.arange(u + 1, n), indexing="ij")
        s, t = s.ravel(), t.ravel()
        vals = _value_norm(h.evaluate(s, np.full_like(s, u), t), ndim)
        denom = (times[u] - times[s]) ** gamma * (times[t] - times[u]) ** rho
        best = max(best, float(np.max(vals / denom)))
    return HolderReport((gamma, rho), best)


def dyadic_sums(g: Increment, lo: int = 0, hi: Optional[int] = None) -> np.ndarray:
    """Riemann sums of ``g`` over ``[t_lo, t_hi]`` with index strides ``2^k``.

    Entry ``k`` uses stride ``2^k`` (the last subinterval may be shorter),
    so entry 0 is the sum over the ambient grid cells.
    """
    hi = g.n_points - 1 if hi is None else hi
    span = hi - lo
    if span < 1:
        raise ValueError("empty interval")
    sums = []
    for k in range(int(np.ceil(np.log2(span))) + 1):
        pts = np.append(np.arange(lo, hi, 2**k), hi)
        sums.append(np.sum(g.evaluate(pts[:-1], pts[1:]), axis=0))
    return np.array(sums)


def _check_cauchy(sums: np.ndarray) -> None:
    diffs = np.array([np.max(np.abs(np.asarray(a - b))) for a, b in zip(sums[1:], sums[:-1])])
    scale = max(1.0, float(np.max(np.abs(sums[0]))))
    if len(diffs) < 3 or diffs[0] <= CAUCHY_RTOL * scale:
        return
    finest = diffs[: min(4, len(diffs) - 1) + 1]
    finest = np.maximum(finest, 1e-300)
    # differences shrink towards the fine end: finest[0] << finest[-1]
    rate = np.mean(np.log2(finest[:-1] / finest[1:]))
    if rate > -0.02:
        raise SewingError(
            f"dyadic Riemann sums are not Cauchy (mean log2 ratio {rate:.3f}); "
            "the germ is probably not of order > 1"
        )


def sew(g: Increment, mu: float) -> Increment:
    """Limit of Riemann sums of the rank-2 germ ``g``, as an additive increment.

    The limit is the sum over the ambient grid cells; the dyadic sums over
    the whole horizon are checked for Cauchy behaviour first.
    """
    if g.rank != 2:
        raise ValueError("sew expects a rank-2 increment")
    if mu <= 1.0:
        raise ValueError(f"sewing needs mu > 1, got {mu}")
    _check_cauchy(dyadic_sums(g))
    return Increment.from_cells(g.times, g.cells())


def iterated_integral2(times, f, g) -> Increment:
    """``J_st(df dg) = int_s^t (f_u - f_s) dg_u`` for piecewise-linear paths.

    ``f`` and ``g`` may carry trailing value axes; values multiply with
    numpy broadcasting.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    df, dg = np.diff(f, axis=0), np.diff(g, axis=0)
    steps = f[:-1] * dg + 0.5 * df * dg
    acc = np.zeros((len(steps) + 1,) + steps.shape[1:])
    np.cumsum(steps, axis=0, out=acc[1:])

    def evaluate(s, t):
        return acc[t] - acc[s] - f[s] * (g[t] - g[s])

    return Increment(np.asarray(times, dtype=float), 2, evaluate, steps.shape[1:])

