import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symconvex.grid import Grid, RigidMotion
from symconvex.operators import (
    FirstOrderOperator,
    adjoint_symbol,
    apply,
    ellipticity_margin,
    get_operator,
    kk_reduction,
    make_builtin,
    sigma_min,
    sym_basis,
    symbol,
    to_coords,
    to_matrix,
    tracefree_basis,
)

BUILTINS = ["grad", "div", "eps", "eps_dev"]
finite = st.floats(-10, 10, allow_nan=False)


def as_matrix(op, coords):
    return to_matrix(coords, op.basis)


# oracle: symmetric part of v (x) xi written out by hand
def sym_outer(xi, v):
    m = np.outer(v, xi)
    return 0.5 * (m + m.T)


def test_eps_first_coefficient_acts_on_v():
    op = make_builtin("symmetric_gradient", 2)
    v = np.array([1.7, -0.4])
    got = as_matrix(op, op.coeffs[0] @ v)
    np.testing.assert_allclose(got, [[v[0], v[1] / 2], [v[1] / 2, 0.0]], atol=1e-15)


def test_gradient_symbol_is_v_outer_xi():
    op = make_builtin("gradient", 2)
    got = as_matrix(op, symbol(op, [1.0, 2.0]) @ np.array([1.0, 0.0]))
    np.testing.assert_allclose(got, [[1.0, 2.0], [0.0, 0.0]], atol=1e-15)


def test_divergence_second_coefficient_picks_second_component():
    op = make_builtin("divergence", 3)
    v = np.array([0.3, -1.1, 2.5])
    np.testing.assert_allclose(op.coeffs[1] @ v, [v[1]], atol=1e-15)


def test_symbol_at_unit_vector_and_zero():
    op = make_builtin("eps", 2)
    np.testing.assert_array_equal(symbol(op, [1.0, 0.0]), op.coeffs[0])
    for name in BUILTINS:
        o = make_builtin(name, 2)
        assert not np.any(symbol(o, [0.0, 0.0]))


def test_eps_symbol_at_oblique_direction():
    op = make_builtin("eps", 2)
    got = as_matrix(op, symbol(op, [0.6, 0.8]) @ np.array([1.0, 0.0]))
    np.testing.assert_allclose(got, [[0.6, 0.4], [0.4, 0.0]], atol=1e-15)


def test_normal_matrix_of_eps_along_first_axis():
    op = make_builtin("eps", 2)
    A = symbol(op, [1.0, 0.0])
    np.testing.assert_allclose(adjoint_symbol(op, [1.0, 0.0]) @ A, np.diag([1.0, 0.5]), atol=1e-15)


@pytest.mark.parametrize("name", ["grad", "eps", "eps_dev"])
def test_normal_matrix_is_positive_definite_for_elliptic(name):
    op = make_builtin(name, 2)
    rng = np.random.default_rng(1)
    for xi in rng.standard_normal((20, 2)):
        M = adjoint_symbol(op, xi) @ symbol(op, xi)
        np.testing.assert_allclose(M, M.T, atol=1e-14)
        assert np.linalg.eigvalsh(M)[0] > 0


def test_bases_are_orthonormal():
    for n in (2, 3, 4):
        for B in (sym_basis(n), tracefree_basis(n)):
            gram = np.einsum("aij,bij->ab", B, B)
            np.testing.assert_allclose(gram, np.eye(len(B)), atol=1e-14)
        assert np.allclose(np.trace(tracefree_basis(n), axis1=1, axis2=2), 0)


def test_coordinates_round_trip():
    rng = np.random.default_rng(0)
    S = rng.standard_normal((3, 3))
    S = S + S.T
    B = sym_basis(3)
    np.testing.assert_allclose(to_matrix(to_coords(S, B), B), S, atol=1e-14)


@pytest.mark.parametrize("n", [2, 3])
def test_eps_matches_symmetrised_outer_product(n):
    op = make_builtin("eps", n)
    rng = np.random.default_rng(n)
    for _ in range(10):
        xi, v = rng.standard_normal(n), rng.standard_normal(n)
        np.testing.assert_allclose(as_matrix(op, symbol(op, xi) @ v), sym_outer(xi, v), atol=1e-14)


def test_eps_dev_is_trace_free_part():
    op = make_builtin("eps_dev", 3)
    rng = np.random.default_rng(4)
    xi, v = rng.standard_normal(3), rng.standard_normal(3)
    S = sym_outer(xi, v)
    expected = S - np.trace(S) / 3 * np.eye(3)
    np.testing.assert_allclose(as_matrix(op, symbol(op, xi) @ v), expected, atol=1e-14)


@pytest.mark.parametrize("name,expected", [("eps", 2**-0.5), ("eps_dev", 2**-0.5), ("grad", 1.0)])
def test_ellipticity_margins_match_closed_forms(name, expected):
    rep = ellipticity_margin(make_builtin(name, 2))
    assert rep.elliptic
    assert abs(rep.min_singular_value - expected) < 1e-6


def test_divergence_is_not_elliptic_and_witness_is_in_kernel_direction():
    op = make_builtin("div", 2)
    rep = ellipticity_margin(op)
    assert not rep.elliptic
    assert rep.min_singular_value <= 1e-9
    xi = rep.witness_xi
    v = np.array([-xi[1], xi[0]])
    assert abs((symbol(op, xi) @ v)[0]) < 1e-12


def test_ellipticity_margin_agrees_with_dense_sampling():
    # oracle: brute force over 20000 directions of the half circle
    op = make_builtin("eps", 2)
    t = np.linspace(0, np.pi, 20000)
    brute = sigma_min(op, np.column_stack([np.cos(t), np.sin(t)])).min()
    assert abs(ellipticity_margin(op).min_singular_value - brute) < 1e-9


@pytest.mark.parametrize("name", ["eps", "eps_dev", "grad"])
def test_margin_stable_under_sample_doubling(name):
    op = make_builtin(name, 3)
    a = ellipticity_margin(op, coarse_samples=64).min_singular_value
    b = ellipticity_margin(op, coarse_samples=128).min_singular_value
    assert abs(a - b) < 1e-6


def test_ellipticity_in_three_dimensions():
    assert abs(ellipticity_margin(make_builtin("eps", 3)).min_singular_value - 2**-0.5) < 1e-6


def test_kk_gradient_to_eps_is_symmetrisation():
    rep = kk_reduction(make_builtin("grad", 2), make_builtin("eps", 2))
    assert rep.exists and rep.residual < 1e-12
    # oracle: symmetrisation written in the two coordinate systems
    Bf = make_builtin("grad", 2).basis
    Bs = make_builtin("eps", 2).basis
    C = np.array([[np.sum(Bs[a] * 0.5 * (Bf[b] + Bf[b].T)) for b in range(4)] for a in range(3)])
    np.testing.assert_allclose(rep.C, C, atol=1e-12)


@pytest.mark.parametrize("op1", ["eps", "eps_dev"])
def test_no_multiplier_from_symmetric_operators_to_gradient(op1):
    rep = kk_reduction(make_builtin(op1, 2), make_builtin("grad", 2))
    assert not rep.exists
    assert rep.residual > 1e-3


def test_kk_residual_oracle_value():
    # projecting the gradient coefficients onto the row space of the eps coefficients leaves
    # the skew part e1 (x) e2 - e2 (x) e1, of norm sqrt(2)/2 per coefficient pair
    rep = kk_reduction(make_builtin("eps", 2), make_builtin("grad", 2))
    assert abs(rep.residual - np.sqrt(2) / 4) < 1e-12


@pytest.mark.parametrize("name", BUILTINS)
def test_kk_with_itself_is_identity(name):
    op = make_builtin(name, 2)
    rep = kk_reduction(op, op)
    assert rep.exists and rep.residual < 1e-15
    np.testing.assert_allclose(rep.C, np.eye(op.dim_W), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(BUILTINS), finite, finite, st.tuples(finite, finite), st.tuples(finite, finite))
def test_symbol_is_linear(name, a, b, xi, eta):
    op = make_builtin(name, 2)
    xi, eta = np.array(xi), np.array(eta)
    np.testing.assert_allclose(symbol(op, a * xi + b * eta), a * symbol(op, xi) + b * symbol(op, eta),
                               atol=1e-12 * (1 + abs(a) + abs(b)) * 10)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(BUILTINS), st.floats(-50, 50, allow_nan=False), st.tuples(finite, finite))
def test_sigma_min_is_homogeneous(name, t, xi):
    op = make_builtin(name, 2)
    xi = np.array(xi)
    assert abs(sigma_min(op, t * xi) - abs(t) * sigma_min(op, xi)) <= 1e-10 * (1 + abs(t) * np.abs(xi).max())


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(BUILTINS), st.tuples(finite, finite))
def test_adjoint_is_transpose(name, xi):
    op = make_builtin(name, 2)
    np.testing.assert_array_equal(adjoint_symbol(op, xi), symbol(op, xi).T)


def test_operator_json_round_trip():
    op = make_builtin("eps_dev", 2)
    back = FirstOrderOperator.from_json(op.to_json())
    np.testing.assert_array_equal(back.coeffs, op.coeffs)
    d = json.loads(op.to_json())
    assert (d["n"], d["dim_V"], d["dim_W"]) == (2, 2, 2)
    assert get_operator(op.to_json()).dim_W == 2


def test_malformed_operator_json_is_rejected():
    with pytest.raises(ValueError):
        FirstOrderOperator.from_dict({"n": 2, "dim_V": 2, "dim_W": 3, "coeffs": [[[1.0]]]})
    with pytest.raises(ValueError):
        make_builtin("curl", 2)


def test_apply_annihilates_constants_and_rigid_motions():
    g = Grid(17)
    eps = make_builtin("eps", 2)
    const = g.field(lambda x, y: (0 * x + 2.0, 0 * y - 1.0))
    assert np.abs(apply(eps, const).values).max() == 0.0
    rigid = RigidMotion(1.0, np.zeros(2)).field(g)
    assert np.abs(apply(eps, rigid).values[g.interior]).max() < 1e-13


def test_eps_dev_kills_z_squared_with_central_differences():
    g = Grid(21)
    u = g.field(lambda x, y: (x**2 - y**2, 2 * x * y))
    e = apply(make_builtin("eps_dev", 2), u, scheme="central")
    assert np.abs(e.values[g.interior]).max() < 1e-12


@pytest.mark.parametrize("scheme", ["central", "forward"])
def test_apply_exact_on_affine_fields_and_linear(scheme):
    g = Grid(13)
    op = make_builtin("eps", 2)
    M = np.array([[0.3, -1.2], [0.7, 0.5]])
    u = g.field(lambda x, y: (M[0, 0] * x + M[0, 1] * y, M[1, 0] * x + M[1, 1] * y))
    expected = to_coords(0.5 * (M + M.T), op.basis)
    np.testing.assert_allclose(apply(op, u, scheme=scheme).values, np.broadcast_to(expected, (13, 13, 3)),
                               atol=1e-12)
    w = g.field(lambda x, y: (np.sin(x), np.cos(3 * y)))
    lhs = apply(op, u * 2.0 + w, scheme=scheme).values
    rhs = 2.0 * apply(op, u, scheme=scheme).values + apply(op, w, scheme=scheme).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
