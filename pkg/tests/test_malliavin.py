import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from roughdense.driver import TimeGrid, increment_covariance, levy_area, sample_fbm
from roughdense.fields import constant_frame, constants_MC, geometric, linear_drift, so3_frame
from roughdense.malliavin import (
    Method,
    deterministic_bound_check,
    directional_oracle,
    duhamel_residual,
    holder_bound_check,
    malliavin_matrix,
    propagate,
    propagate_many,
    skew_exp_check,
    skew_exp_margins,
)
from roughdense.solver import solve, solve_many

SO3 = so3_frame(drift_coeffs=[0.2, 0.1, -0.3])
X0 = [0.3, -0.2, 0.4]


def random_pair(seed, d):
    rng = np.random.default_rng(seed)
    a1 = rng.standard_normal((d, d)) / np.sqrt(d)
    g = rng.standard_normal((d, d))
    return a1, g - g.T


@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.floats(0.1, 5.0))
def test_skew_exponential_bound(seed, d, scale):
    a1, a2 = random_pair(seed, d)
    assert skew_exp_margins(a1, scale * a2) >= -1e-10


def test_pure_rotation_has_unit_norm():
    a2 = np.array([[0.0, 1.3], [-1.3, 0.0]])
    rep = skew_exp_check(np.zeros((2, 2)), a2, quad_steps=100)
    assert rep.norm_exp == pytest.approx(1.0)
    assert rep.margin == pytest.approx(0.0, abs=1e-14)


def test_non_skew_part_rejected():
    with pytest.raises(ValueError, match="skew"):
        skew_exp_margins(np.eye(2), np.ones((2, 2)))


@pytest.mark.parametrize("seed", range(3))
def test_duhamel_identity(seed):
    a1, a2 = random_pair(seed, 4)
    assert duhamel_residual(a1, a2, 1.0, 10_000) < 1e-8
    # the residual is the midpoint-rule error and shrinks quadratically
    coarse = duhamel_residual(a1, a2, 1.0, 100)
    fine = duhamel_residual(a1, a2, 1.0, 1000)
    assert coarse / fine == pytest.approx(100, rel=0.05)


def test_duhamel_with_opposite_sign_fails():
    a1, a2 = random_pair(0, 4)
    # the identity is not symmetric in the sign of the integral term
    h = 1e-4
    s = (np.arange(10_000) + 0.5) * h
    integral = np.sum(linalg.expm((1 - s)[:, None, None] * (a1 + a2)) @ a1 @ linalg.expm(s[:, None, None] * a2), 0) * h
    wrong = np.linalg.norm(linalg.expm(a1 + a2) - linalg.expm(a2) + integral, 2)
    assert wrong > 0.1


def test_constant_frame_derivative_is_identity():
    drv = levy_area(sample_fbm(0.6, 2, TimeGrid(6), 1))
    system = constant_frame(2)
    sol = solve(system, drv, [0.0, 0.0])
    for method in Method:
        proc = propagate(sol, system, drv, method)
        assert np.allclose(proc.matrices, np.eye(2), atol=1e-15)


def test_linear_drift_derivative_decays_exponentially():
    # dM = M kappa ds backwards from M_T = I gives M_s = exp(-kappa (T - s))
    drv = levy_area(sample_fbm(0.7, 1, TimeGrid(8), 1))
    system = linear_drift(1, kappa=0.8)
    sol = solve(system, drv, [0.5])
    proc = propagate(sol, system, drv)
    assert np.allclose(proc.matrices[:, 0, 0], np.exp(-0.8 * (1 - proc.times)), atol=1e-12)


def test_geometric_derivative_equals_terminal_value():
    # X = x e^B, so D_s X_T = X_T for every s
    drv = levy_area(sample_fbm(0.75, 1, TimeGrid(10), 7))
    sol = solve(geometric(), drv, [1.5])
    proc = propagate(sol, geometric(), drv)
    assert np.allclose(proc.matrices[:, 0, 0], sol.terminal[0], rtol=1e-3)


def test_exp_product_matches_finite_differences():
    drv = levy_area(sample_fbm(0.75, 3, TimeGrid(10), 7))
    sol = solve(SO3, drv, X0)
    proc = propagate(sol, SO3, drv)
    s = 0.875
    oracle = directional_oracle(SO3, drv, s, None, 1e-4, X0)
    m = proc.on([s])[0]
    assert np.linalg.norm(oracle - m) / np.linalg.norm(m) < 1e-2


def test_oracle_column_matches_full_matrix():
    drv = levy_area(sample_fbm(0.75, 3, TimeGrid(6), 7))
    full = directional_oracle(SO3, drv, 0.5, None, 1e-4, X0)
    col = directional_oracle(SO3, drv, 0.5, 1, 1e-4, X0)
    assert np.allclose(full[:, 1], col)


def test_oracle_refuses_rough_driver():
    drv = levy_area(sample_fbm(0.4, 3, TimeGrid(5), 7))
    with pytest.raises(ValueError, match="Young"):
        directional_oracle(SO3, drv, 0.5, 0, 1e-4, X0)


def test_davie_and_exp_product_agree_in_rough_regime():
    gaps = []
    for level in (8, 10):
        drv = levy_area(sample_fbm(0.4, 3, TimeGrid(level), 7))
        sol = solve(SO3, drv, X0)
        a = propagate(sol, SO3, drv, Method.EXP_PRODUCT)
        b = propagate(sol, SO3, drv, Method.DAVIE)
        gaps.append(np.max(np.abs(a.matrices - b.matrices)))
    assert gaps[1] < gaps[0] < 0.1


def test_batched_propagation_matches_single():
    drivers = [levy_area(sample_fbm(0.6, 3, TimeGrid(6), s)) for s in range(3)]
    sols = solve_many(SO3, drivers, X0)
    batch = propagate_many(sols, SO3, drivers)
    for sol, drv, proc in zip(sols, drivers, batch):
        assert np.allclose(propagate(sol, SO3, drv).matrices, proc.matrices)


@pytest.mark.parametrize("h", [0.4, 0.75])
def test_deterministic_bound_on_so3(h):
    drv = levy_area(sample_fbm(h, 3, TimeGrid(8), 3))
    sol = solve(SO3, drv, X0)
    proc = propagate(sol, SO3, drv)
    m, c = constants_MC(SO3, proc.points)
    rep = deterministic_bound_check(proc, m, c, 1.0)
    assert rep.margin >= -1e-8
    assert rep.bound_sqrt <= rep.bound


def test_malliavin_matrix_of_identity_frame():
    drv = levy_area(sample_fbm(0.75, 2, TimeGrid(8), 1))
    system = constant_frame(2)
    proc = propagate(solve(system, drv, [0.0, 0.0]), system, drv)
    mm = malliavin_matrix(proc, 0.75)
    assert np.allclose(mm.gamma, np.eye(2), atol=1e-12)
    assert np.allclose(mm.l2_form, np.eye(2), atol=1e-12)


def test_malliavin_matrix_is_gram_form(rng):
    grid = TimeGrid(4)
    mats = rng.standard_normal((17, 2, 2))
    from roughdense.malliavin import DerivativeProcess

    proc = DerivativeProcess(grid.points, mats, Method.EXP_PRODUCT, np.zeros((17, 2)))
    cov = increment_covariance(0.35, grid)
    expected = sum(mats[:-1, :, j].T @ cov @ mats[:-1, :, j] for j in range(2))
    assert np.allclose(malliavin_matrix(proc, 0.35).gamma, expected, atol=1e-13)


def test_malliavin_matrix_needs_dyadic_grid():
    from roughdense.malliavin import DerivativeProcess

    proc = DerivativeProcess(np.linspace(0, 1, 6), np.zeros((6, 1, 1)), Method.DAVIE, np.zeros((6, 1)))
    with pytest.raises(ValueError):
        malliavin_matrix(proc, 0.6)


def test_derivative_lookup_requires_grid_times():
    drv = levy_area(sample_fbm(0.6, 2, TimeGrid(3), 1))
    proc = propagate(solve(constant_frame(2), drv, [0, 0]), constant_frame(2), drv)
    assert proc.on([0.875]).shape == (1, 2, 2)
    with pytest.raises(ValueError):
        proc.on([0.9])


def test_holder_bound_ratio_is_finite():
    drv = levy_area(sample_fbm(0.7, 3, TimeGrid(7), 2))
    sol = solve(SO3, drv, X0)
    proc = propagate(sol, SO3, drv)
    ratio = holder_bound_check(proc, drv, X0)
    assert np.isfinite(ratio) and ratio > 0
