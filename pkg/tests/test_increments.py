import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roughdense.increments import (
    Increment,
    SewingError,
    delta,
    delta_inc,
    delta_path,
    dyadic_sums,
    iterated_integral2,
    norm_c2,
    norm_c3,
    product,
    sew,
)

N = 6
TIMES = np.linspace(0.0, 1.0, N)
finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
paths = arrays(float, (N,), elements=finite)
tables = arrays(float, (N, N), elements=finite)


def path(v):
    return Increment.from_path(TIMES, v)


def table(v):
    return Increment.from_table(TIMES, v, 2)


def close(a, b):
    a, b = a.table(), b.table()
    scale = max(1.0, np.abs(a).max(), np.abs(b).max())
    return np.max(np.abs(a - b)) <= 1e-14 * scale


def test_three_point_example():
    f = np.array([1.0, 2.0, 4.0])
    g = np.array([0.5, -1.0, 3.0])
    times = np.array([0.0, 0.5, 1.0])
    h = product(f, delta_path(times, g))
    assert h(0, 2) == f[0] * (g[2] - g[0])
    assert delta_inc(h)(0, 1, 2) == pytest.approx(-(f[1] - f[0]) * (g[2] - g[1]))


@given(paths)
def test_delta_delta_vanishes_on_paths(f):
    dd = delta(delta(path(f))).table()
    assert np.max(np.abs(dd)) <= 1e-14 * max(1.0, np.abs(f).max())


@given(tables)
def test_delta_delta_vanishes_on_two_increments(h):
    dd = delta(delta(table(h))).table()
    assert np.max(np.abs(dd)) <= 1e-14 * max(1.0, np.abs(h).max())


@given(paths, paths)
def test_leibniz_path_times_path(g, h):
    lhs = delta(product(path(g), path(h)))
    rhs = product(delta(path(g)), path(h)) + product(path(g), delta(path(h)))
    assert close(lhs, rhs)


@given(paths, tables)
def test_leibniz_path_times_increment(g, h):
    lhs = delta(product(path(g), table(h)))
    rhs = product(delta(path(g)), table(h)).scaled(-1.0) + product(path(g), delta(table(h)))
    assert close(lhs, rhs)


@given(tables, paths)
def test_leibniz_increment_times_path(g, h):
    lhs = delta(product(table(g), path(h)))
    rhs = product(delta(table(g)), path(h)) + product(table(g), delta(path(h)))
    assert close(lhs, rhs)


def test_product_rank_limit():
    two = table(np.ones((N, N)))
    with pytest.raises(ValueError):
        product(delta(two), two)


def test_product_broadcasts_vector_values(rng):
    f = rng.standard_normal((N, 3))
    g = rng.standard_normal(N)
    h = product(f, delta_path(TIMES, g))
    assert h(1, 4).shape == (3,)
    assert np.allclose(h(1, 4), f[1] * (g[4] - g[1]))


def test_norm_c2_of_linear_increment():
    inc = delta_path(TIMES, 3.0 * TIMES)
    assert norm_c2(inc, 1.0).value == pytest.approx(3.0)
    assert norm_c2(inc, 0.5).value == pytest.approx(3.0)
    with pytest.raises(ValueError):
        norm_c2(inc, 2.5)


def test_norm_c3_brute_force(rng):
    h = rng.standard_normal((N, N, N))
    inc = Increment.from_table(TIMES, h, 3)
    best = max(
        abs(h[s, u, t]) / ((TIMES[u] - TIMES[s]) ** 0.7 * (TIMES[t] - TIMES[u]) ** 0.4)
        for s in range(N)
        for u in range(s + 1, N)
        for t in range(u + 1, N)
    )
    assert norm_c3(inc, 0.7, 0.4).value == pytest.approx(best, rel=1e-14)


@given(
    arrays(float, (17,), elements=finite),
    arrays(float, (17,), elements=finite),
    st.floats(0.3, 1.0),
    st.floats(0.3, 1.0),
)
def test_sewing_bound_on_dyadic_pairs(f, h, rho, kappa):
    # g = f dh has dg_sut = -(f_u - f_s)(h_t - h_u); the bisection bound is exact on the grid
    times = np.linspace(0, 1, 17)
    g = product(f, delta_path(times, h))
    norm = norm_c3(delta(g), rho, kappa).value
    mu = rho + kappa
    if mu <= 1.0:
        return
    limit = Increment.from_cells(times, g.cells())
    for size in (2, 4, 8, 16):
        s = np.arange(0, 17 - size, size)
        t = s + size
        err = np.abs(limit(s, t) - g(s, t))
        bound = norm * (times[t] - times[s]) ** mu / (2**mu - 2)
        assert np.all(err <= bound * (1 + 1e-12) + 1e-12)


def test_riemann_sum_of_path_against_itself(rng):
    times = np.linspace(0, 1, 2**10 + 1)
    f = np.sin(3 * times) + times**2 + 0.01 * np.cumsum(rng.standard_normal(len(times)))
    inc = sew(product(f, delta_path(times, f)), 2.0)
    # left sums: sum f_k df_k = (f_T^2 - f_0^2) / 2 - sum df_k^2 / 2
    exact = (f[-1] ** 2 - f[0] ** 2) / 2 - np.sum(np.diff(f) ** 2) / 2
    assert inc(0, 2**10) == pytest.approx(exact, rel=1e-12)


def test_sew_rejects_small_exponent():
    g = delta_path(TIMES, TIMES)
    with pytest.raises(ValueError):
        sew(g, 1.0)


def test_sew_rejects_germ_without_cancellation():
    times = np.linspace(0, 1, 2**9 + 1)
    germ = Increment(times, 2, lambda s, t: np.abs(times[t] - times[s]) ** 0.8)
    with pytest.raises(SewingError):
        sew(germ, 1.2)


def test_dyadic_sums_are_additive_for_exact_increments(rng):
    times = np.linspace(0, 1, 33)
    inc = delta_path(times, rng.standard_normal(33))
    sums = dyadic_sums(inc)
    assert np.allclose(sums, sums[0])


def test_iterated_integral_closed_form():
    times = np.linspace(0, 1, 2**12 + 1)
    j = iterated_integral2(times, times, times**2)
    s, t = 0.25, 0.75
    exact = 2 * (t**3 - s**3) / 3 - s * (t**2 - s**2)
    i0, i1 = np.searchsorted(times, [s, t])
    assert j(i0, i1) == pytest.approx(exact, abs=1e-7)


def test_iterated_integral_chen_identity(rng):
    times = np.linspace(0, 1, 9)
    f, g = rng.standard_normal(9), rng.standard_normal(9)
    j = iterated_integral2(times, f, g)
    # delta J(df dg) = df dg
    lhs = delta(j)
    rhs = product(delta_path(times, f), delta_path(times, g))
    assert close(lhs, rhs)
