"""Monte Carlo ensembles and empirical checks of the probabilistic bounds.

Every check returns an :class:`InequalityReport` whose verdict is
``lhs <= rhs + 3 stderr``.  Tail probabilities carry Wilson intervals; the
reported ``stderr`` is one third of the distance from the estimate to the
z = 3 Wilson upper limit, so a pass means that limit sits below the bound.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .driver import HurstParam, Regime, TimeGrid, levy_area, pairwise_sup, path_seed, sample_fbm
from .fields import VectorFieldSystem, constants_MC
from .malliavin import Method, propagate_many
from .solver import Scheme, SolverConfig, solve_many

__all__ = [
    "Ensemble",
    "DensityEstimate",
    "EnvelopeParams",
    "InequalityReport",
    "BudgetError",
    "build_ensemble",
    "wilson_interval",
    "estimate_density",
    "gaussian_envelope",
    "subgaussian_envelope",
    "fit_gaussian_envelope",
    "fit_subgaussian_envelope",
    "envelope_check",
    "concentration_check",
    "logsobolev_check",
    "poincare_check",
    "holder_norms",
    "holder_tail_fit",
    "scaling_slope",
    "merge_ensembles",
]

BUDGET = 1e9
Z = 3.0


class BudgetError(ValueError):
    """Requested ensemble exceeds the desk-scale work budget."""


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Per-path summaries of an ensemble of solutions."""

    system: str
    hurst: HurstParam
    horizon: float
    level: int
    x0: np.ndarray
    seeds: np.ndarray
    terminal: np.ndarray
    sup_abs: np.ndarray
    derivative_sup: Optional[np.ndarray] = None
    M: float = float("nan")
    C: float = float("nan")

    @property
    def size(self) -> int:
        return len(self.seeds)


def build_ensemble(
    system: VectorFieldSystem,
    hurst,
    T: float,
    level: int,
    N: int,
    base_seed: int,
    x0=None,
    scheme: Scheme = Scheme.DAVIE,
    derivatives: bool = False,
    chunk: int = 1024,
    offset: int = 0,
) -> Ensemble:
    """Solve ``N`` independent paths; path ``i`` uses seed ``path_seed(base_seed, offset + i)``.

    With ``derivatives`` the exponential-product derivative is propagated
    and the constants ``M``, ``C`` are taken over every visited state.
    """
    hurst = HurstParam.coerce(hurst)
    if N < 1:
        raise ValueError("ensemble size must be at least 1")
    if N * 2**level > BUDGET:
        raise BudgetError(f"N * 2^level = {N * 2**level:.3g} exceeds the budget {BUDGET:.0e}")
    grid = TimeGrid(level, T)
    x0 = np.zeros(system.dim) if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (system.dim,))
    config = SolverConfig(scheme=scheme)
    seeds = np.array([path_seed(base_seed, offset + i) for i in range(N)], dtype=np.uint64)
    terminal = np.empty((N, system.dim))
    sup_abs = np.empty(N)
    deriv = np.empty(N) if derivatives else None
    m_const, c_const = 0.0, 0.0
    for lo in range(0, N, chunk):
        drivers = [levy_area(sample_fbm(hurst, system.dim, grid, int(s))) for s in seeds[lo : lo + chunk]]
        sols = solve_many(system, drivers, x0, config)
        terminal[lo : lo + len(sols)] = [sol.terminal for sol in sols]
        sup_abs[lo : lo + len(sols)] = [sol.sup_norm for sol in sols]
        if derivatives:
            procs = propagate_many(sols, system, drivers, Method.EXP_PRODUCT)
            deriv[lo : lo + len(sols)] = [p.sup_norm for p in procs]
            m, c = constants_MC(system, np.concatenate([p.points for p in procs]))
            m_const, c_const = max(m_const, m), max(c_const, c)
    if not derivatives:
        m_const, c_const = constants_MC(system, terminal)
    return Ensemble(system.name, hurst, T, level, x0, seeds, terminal, sup_abs, deriv, m_const, c_const)


def wilson_interval(k, n, z: float = Z) -> tuple[np.ndarray, np.ndarray]:
    """Wilson score interval for ``k`` successes out of ``n``."""
    k = np.asarray(k, dtype=float)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.maximum(centre - half, 0.0), np.minimum(centre + half, 1.0)


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Normalized histogram with per-bin Wilson bands (densities, not masses)."""

    edges: tuple
    counts: np.ndarray
    n: int
    z: float = Z

    @property
    def volumes(self) -> np.ndarray:
        widths = np.meshgrid(*[np.diff(e) for e in self.edges], indexing="ij")
        return np.prod(widths, axis=0)

    @property
    def density(self) -> np.ndarray:
        return self.counts / (self.n * self.volumes)

    @property
    def bands(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = wilson_interval(self.counts, self.n, self.z)
        return lo / self.volumes, hi / self.volumes

    @property
    def centres(self) -> list:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def radial_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Smallest and largest ``|y|`` over each bin box."""
        lo = np.meshgrid(*[e[:-1] for e in self.edges], indexing="ij")
        hi = np.meshgrid(*[e[1:] for e in self.edges], indexing="ij")
        near = [np.where((a <= 0) & (b >= 0), 0.0, np.minimum(abs(a), abs(b))) for a, b in zip(lo, hi)]
        far = [np.maximum(abs(a), abs(b)) for a, b in zip(lo, hi)]
        return np.sqrt(sum(x * x for x in near)), np.sqrt(sum(x * x for x in far))


def estimate_density(samples, bins: int = 64, z: float = Z, range_=None) -> DensityEstimate:
    """Histogram density of ``samples (N, d)`` (or an ensemble's terminal values)."""
    x = samples.terminal if isinstance(samples, Ensemble) else np.asarray(samples, dtype=float)
    x = x.reshape(len(x), -1)
    n, d = x.shape
    if np.all(np.ptp(x, axis=0) == 0):
        # all mass at one point: a single unit-volume bin
        edges = tuple(np.array([v - 0.5, v + 0.5]) for v in x[0])
        return DensityEstimate(edges, np.full((1,) * d, float(n)), n, z)
    counts, edges = np.histogramdd(x, bins=bins, range=range_)
    if counts.max() < 30:
        raise ValueError(f"largest bin holds {int(counts.max())} samples; at least 30 are needed")
    return DensityEstimate(tuple(edges), counts, n, z)


@dataclass(frozen=True)
class EnvelopeParams:
    """Gaussian envelope ``c1 exp(-(|y| - c2)^2 / (c3 e^{c4 t} t^{2H}))`` or,
    with ``delta`` set, the sub-Gaussian envelope ``c1 exp(-c2 |y|^delta)``."""

    c1: float
    c2: float
    c3: Optional[float] = None
    c4: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if self.delta is None and (self.c3 is None or self.c4 is None):
            raise ValueError("Gaussian envelope needs c3 and c4")


@dataclass(frozen=True)
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    stderr: float
    params: dict = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return bool(self.lhs <= self.rhs + 3.0 * self.stderr)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict
        return out


def gaussian_envelope(r, params: EnvelopeParams, hurst, t: float) -> np.ndarray:
    h = HurstParam.coerce(hurst).h
    scale = params.c3 * np.exp(params.c4 * t) * t ** (2 * h)
    return params.c1 * np.exp(-((np.asarray(r) - params.c2) ** 2) / scale)


def subgaussian_envelope(r, params: EnvelopeParams) -> np.ndarray:
    return params.c1 * np.exp(-params.c2 * np.asarray(r) ** params.delta)


def _envelope_sup(density: DensityEstimate, params: EnvelopeParams, hurst, t: float) -> np.ndarray:
    rmin, rmax = density.radial_range()
    if params.delta is None:
        return gaussian_envelope(np.clip(params.c2, rmin, rmax), params, hurst, t)
    return subgaussian_envelope(rmin, params)


def fit_gaussian_envelope(density: DensityEstimate, hurst, t: float, c2: float, c3: float, c4: float) -> EnvelopeParams:
    """Smallest ``c1`` for which every upper band lies below the envelope."""
    shape = _envelope_sup(density, EnvelopeParams(1.0, c2, c3, c4), hurst, t)
    _, upper = density.bands
    # a relative nudge keeps the fitted envelope above every band after rounding
    return EnvelopeParams(float(np.max(upper / shape)) * (1 + 1e-12), c2, c3, c4)


def fit_subgaussian_envelope(density: DensityEstimate, delta: float, min_count: int = 30) -> EnvelopeParams:
    """Decay rate ``c2`` by least squares on well-populated bins, then the smallest passing ``c1``."""
    rmin, _ = density.radial_range()
    r = np.sqrt(sum(c * c for c in np.meshgrid(*density.centres, indexing="ij")))
    keep = density.counts >= min_count
    slope = np.polyfit(r[keep] ** delta, np.log(density.density[keep]), 1)[0]
    c2 = float(max(-slope, 0.0))
    _, upper = density.bands
    c1 = float(np.max(upper * np.exp(c2 * rmin**delta))) * (1 + 1e-12)
    return EnvelopeParams(c1, c2, delta=delta)


def envelope_check(density: DensityEstimate, params: EnvelopeParams, hurst, T: float) -> InequalityReport:
    """Largest ratio of a bin's upper band to the envelope's sup over that bin; passes at <= 1."""
    env = _envelope_sup(density, params, hurst, T)
    _, upper = density.bands
    ratio = float(np.max(upper / env))
    kind = "gaussian" if params.delta is None else "subgaussian"
    return InequalityReport(f"envelope-{kind}", ratio, 1.0, 0.0, asdict(params))


def concentration_check(
    ensemble: Ensemble, hurst, M: float, C: float, T: float, lambdas: Sequence[float]
) -> list[InequalityReport]:
    """``P(F - E F >= lam) <= exp(-lam^2 / (2 M^2 e^{2CT} T^{2H}))`` with ``F = sup_t |X_t|``."""
    h = HurstParam.coerce(hurst).h
    f = ensemble.sup_abs
    dev = f - f.mean()
    scale = 2.0 * M * M * np.exp(2.0 * C * T) * T ** (2 * h)
    reports = []
    for lam in lambdas:
        k = int(np.sum(dev >= lam))
        p = k / len(f)
        _, hi = wilson_interval(k, len(f))
        bound = float(np.exp(-lam * lam / scale))
        reports.append(
            InequalityReport(
                "concentration", p, bound, float(hi - p) / 3.0, {"lambda": float(lam), "M": M, "C": C, "T": T}
            )
        )
    return reports


def _functional_inputs(samples, f, grad_f):
    x = samples.terminal if isinstance(samples, Ensemble) else np.asarray(samples, dtype=float)
    fv = np.asarray(f(x), dtype=float).reshape(len(x))
    g = np.asarray(grad_f(x), dtype=float).reshape(len(x), -1)
    return fv, np.sum(g * g, axis=1)


def _require_young(hurst) -> float:
    hurst = HurstParam.coerce(hurst)
    if hurst.regime is not Regime.YOUNG:
        raise ValueError(f"functional inequalities are checked for h > 1/2 only, got {hurst.h}")
    return hurst.h


def _entropy(w: np.ndarray) -> float:
    mean = w.mean()
    if mean == 0.0:
        return 0.0
    safe = np.where(w > 0, w, 1.0)
    return float(np.mean(w * np.log(safe)) - mean * np.log(mean))


def _bootstrap_sd(stat: Callable[[np.ndarray], float], n: int, n_boot: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    draws = [stat(rng.integers(0, n, n)) for _ in range(n_boot)]
    return float(np.std(draws, ddof=1))


def logsobolev_check(
    samples, f, grad_f, M: float, C: float, T: float, hurst, n_boot: int = 200, seed: int = 0
) -> InequalityReport:
    """``Ent(f^2) <= 2 M^2 e^{2CT} T^{2H} E|grad f|^2`` on the terminal law."""
    h = _require_young(hurst)
    fv, g2 = _functional_inputs(samples, f, grad_f)
    w = fv * fv
    const = 2.0 * M * M * np.exp(2.0 * C * T) * T ** (2 * h)
    if np.ptp(w) == 0 and not np.any(g2):
        return InequalityReport("log-sobolev", 0.0, 0.0, 0.0, {"M": M, "C": C, "T": T})
    lhs, rhs = _entropy(w), const * float(g2.mean())
    sd = _bootstrap_sd(lambda i: _entropy(w[i]) - const * g2[i].mean(), len(w), n_boot, seed)
    return InequalityReport("log-sobolev", lhs, rhs, sd, {"M": M, "C": C, "T": T})


def poincare_check(
    samples, f, grad_f, M: float, C: float, T: float, hurst, n_boot: int = 200, seed: int = 0
) -> InequalityReport:
    """``Var f <= M^2 e^{2CT} T^{2H} E|grad f|^2`` on the terminal law."""
    h = _require_young(hurst)
    fv, g2 = _functional_inputs(samples, f, grad_f)
    const = M * M * np.exp(2.0 * C * T) * T ** (2 * h)
    if np.ptp(fv) == 0 and not np.any(g2):
        return InequalityReport("poincare", 0.0, 0.0, 0.0, {"M": M, "C": C, "T": T})
    lhs, rhs = float(np.var(fv)), const * float(g2.mean())
    sd = _bootstrap_sd(lambda i: np.var(fv[i]) - const * g2[i].mean(), len(fv), n_boot, seed)
    return InequalityReport("poincare", lhs, rhs, sd, {"M": M, "C": C, "T": T})


def holder_norms(hurst, d: int, grid: TimeGrid, beta: float, N: int, base_seed: int, chunk: int = 4096) -> np.ndarray:
    """Discrete ``||B||_beta`` over ``[0, T]`` for ``N`` sampled paths."""
    out = np.empty(N)
    times = grid.points
    for lo in range(0, N, chunk):
        idx = range(lo, min(N, lo + chunk))
        paths = np.stack([sample_fbm(hurst, d, grid, path_seed(base_seed, i)).values.T for i in idx])
        out[lo : lo + len(paths)] = pairwise_sup(
            len(times), times, beta, lambda i, j: paths[:, j] - paths[:, i], 1
        )
    return out


def holder_tail_fit(norms: np.ndarray, hurst, beta: float, T: float, min_prob: float = 0.05) -> float:
    """Smallest ``M_beta`` with ``P(||B||_beta > r) <= M_beta exp(-r^2 / (2 T^{2(H - beta)}))``
    over radii where the empirical tail is at least ``min_prob``."""
    h = HurstParam.coerce(hurst).h
    r = np.sort(np.asarray(norms))
    n = len(r)
    tail = 1.0 - np.arange(1, n + 1) / n  # P(norm > r_(k))
    keep = tail >= min_prob
    weight = np.exp(r[keep] ** 2 / (2.0 * T ** (2 * (h - beta))))
    return float(np.max(np.concatenate([[1.0], tail[keep] * weight])))


def scaling_slope(times: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log value`` against ``log t``."""
    return float(np.polyfit(np.log(times), np.log(values), 1)[0])


def merge_ensembles(parts: Sequence[Ensemble]) -> Ensemble:
    """Concatenate ensembles built on consecutive seed ranges, in the given order."""
    first = parts[0]
    derivs = None if first.derivative_sup is None else np.concatenate([p.derivative_sup for p in parts])
    return Ensemble(
        first.system,
        first.hurst,
        first.horizon,
        first.level,
        first.x0,
        np.concatenate([p.seeds for p in parts]),
        np.concatenate([p.terminal for p in parts]),
        np.concatenate([p.sup_abs for p in parts]),
        derivs,
        max(p.M for p in parts),
        max(p.C for p in parts),
    )
