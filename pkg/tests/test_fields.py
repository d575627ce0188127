import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roughdense.fields import (
    BUILTIN_SYSTEMS,
    VectorFieldSystem,
    builtin_system,
    check_antisymmetry,
    check_basis,
    check_bracket,
    check_ellipticity,
    constant_frame,
    constants_MC,
    fd_jacobian,
    hypothesis_report,
    levi_civita,
    linear_drift,
    pendulum,
    so3_frame,
)

ROT = st.floats(-2.0, 2.0, allow_nan=False)


def probe(d, rng, n=20, radius=1.5):
    return rng.uniform(-radius, radius, (n, d))


@pytest.mark.parametrize("name", sorted(BUILTIN_SYSTEMS))
def test_builtin_structure_reproduces_brackets(name, rng):
    system = builtin_system(name)
    assert check_bracket(system, probe(system.dim, rng)) < 1e-8


@pytest.mark.parametrize("name", ["constant-frame", "linear-drift", "pendulum", "so3"])
def test_builtin_frames_satisfy_hypotheses(name, rng):
    system = builtin_system(name)
    rep = hypothesis_report(system, probe(system.dim, rng))
    assert rep.holds
    assert rep.antisymmetry_defect < 1e-12
    assert rep.M > 0


@pytest.mark.parametrize("name", sorted(BUILTIN_SYSTEMS))
def test_analytic_jacobians_match_differences(name, rng):
    system = builtin_system(name)
    x = probe(system.dim, rng, 5)
    assert np.allclose(system.jacobians(x), system.jacobians(x, fd_step=1e-6), atol=1e-7)


@pytest.mark.parametrize("name", ["pendulum", "linear-drift"])
def test_analytic_structure_derivative_matches_differences(name, rng):
    system = builtin_system(name)
    x = probe(system.dim, rng, 5)
    bare = VectorFieldSystem(system.dim, system.drift, system.frame, system.jacobian, system.omega)
    assert np.allclose(system.structure_derivative(x), bare.structure_derivative(x), atol=1e-7)


def test_levi_civita_values():
    eps = levi_civita()
    assert eps[0, 1, 2] == 1 and eps[1, 0, 2] == -1 and eps[2, 1, 0] == -1
    assert np.count_nonzero(eps) == 6


@given(arrays(float, (3,), elements=ROT))
def test_so3_bracket_is_cross_product_structure(x):
    system = so3_frame()
    br = system.brackets(x, fd_step=1e-6)[1:, 1:]
    frame = system.frame(x)
    recon = np.einsum("ijk,ak->ija", levi_civita(), frame)
    assert np.allclose(br, recon, atol=1e-6)


def test_so3_frame_continuous_across_series_switch():
    lo, hi = np.array([0.9999e-4, 0.0, 0.0]), np.array([1.0001e-4, 0.0, 0.0])
    jump = so3_frame().frame(hi) - so3_frame().frame(lo)
    # first-order change is the skew part (hi - lo) / 2
    dx = 2e-8
    expected = np.array([[0, 0, 0], [0, 0, -dx / 2], [0, dx / 2, 0]])
    assert np.allclose(jump, expected, atol=1e-12)


def test_structure_solved_from_brackets_without_analytic_table(rng):
    full = so3_frame(scale=0.7, drift_coeffs=[0.1, -0.2, 0.3])
    bare = VectorFieldSystem(3, full.drift, full.frame)
    x = probe(3, rng, 4)
    assert np.allclose(bare.structure(x), full.structure(x), atol=1e-7)


def test_linear_drift_structure():
    system = linear_drift(2, kappa=0.5)
    w = system.structure(np.array([[0.3, -1.0]]))[0]
    assert np.allclose(w[0], 0.5 * np.eye(2))
    assert np.allclose(w[1:], 0.0)


def test_constants_for_scaled_constant_frame(rng):
    system = constant_frame(2, frame=[[2.0, 0.0], [0.0, 0.5]])
    m, c = constants_MC(system, probe(2, rng))
    assert m == pytest.approx(4.0)
    assert c == 0.0
    assert check_ellipticity(system, probe(2, rng)) == pytest.approx(0.25)
    assert check_basis(system, probe(2, rng)) == pytest.approx(0.5)


def test_non_skew_structure_is_reported(rng):
    # V(x) = diag(1 + x_1^2, 1): the bracket [V_1, V_2] lies outside the skew class
    def frame(x):
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = 1.0 + x[..., 1] ** 2
        out[..., 1, 1] = 1.0
        return out

    system = VectorFieldSystem(2, lambda x: np.zeros_like(x), frame)
    assert check_antisymmetry(system, probe(2, rng)) > 0.1


def test_fd_jacobian_of_quadratic():
    x = np.array([[1.0, 2.0], [-0.5, 0.3]])
    jac = fd_jacobian(lambda y: y**2, x)
    expected = np.stack([np.diag(2 * row) for row in x])
    assert np.allclose(jac, expected, atol=1e-8)


def test_point_shape_is_checked():
    with pytest.raises(ValueError):
        pendulum().fields(np.zeros(2))


def test_unknown_builtin():
    with pytest.raises(ValueError, match="unknown system"):
        builtin_system("lorenz")
