import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from symconvex.operators import make_builtin
from symconvex.spectral import (
    DegenerateFieldError,
    NotEllipticError,
    SpectralRecovery,
    TorusField,
    band_limit,
    korn_ratio,
    ornstein_search,
    p2_bound,
    random_band_limited,
    recover,
    spectral_adjoint,
    spectral_apply,
    spectral_gradient,
    upsample,
    wavenumbers,
)

EPS = make_builtin("eps", 2)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def shear(N):
    return TorusField.from_function(N, lambda x, y: (np.sin(2 * np.pi * y), 0 * x))


def test_wavenumbers_zero_nyquist():
    k = wavenumbers(8)
    assert k[4, 0, 0] == 0 and k[3, 0, 0] == 3 and k[5, 0, 0] == -3
    assert wavenumbers(7)[4, 0, 0] == -3


def test_spectral_derivative_of_a_sine_is_exact():
    u = TorusField.from_function(16, lambda x, y: (np.sin(2 * np.pi * 3 * x), np.cos(2 * np.pi * y)))
    Du = spectral_gradient(u).values
    x = np.arange(16) / 16
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    # row-major (Dv)_ij = d_j v_i
    np.testing.assert_allclose(Du[..., 0], 6 * np.pi * np.cos(6 * np.pi * X1), atol=1e-12)
    np.testing.assert_allclose(Du[..., 3], -2 * np.pi * np.sin(2 * np.pi * X2), atol=1e-12)
    np.testing.assert_allclose(Du[..., 1:3], 0.0, atol=1e-12)


@pytest.mark.parametrize("name", ["eps", "eps_dev", "grad", "div"])
def test_spectral_adjoint_is_the_transpose(name):
    op = make_builtin(name, 2)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((12, 12, op.dim_V))
    g = rng.standard_normal((12, 12, op.dim_W))
    lhs = np.sum(spectral_apply(op, u).values * g)
    rhs = np.sum(u * spectral_adjoint(op, g))
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("name", ["eps", "eps_dev", "grad"])
def test_round_trip_at_n64(name):
    op = make_builtin(name, 2)
    u = random_band_limited(64, 2, 20, np.random.default_rng(3))
    back = recover(op, spectral_apply(op, u)).values
    assert rel_l2(back, u - u.mean(axis=(0, 1))) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([8, 15, 32]))
def test_round_trip_property(seed, N):
    u = random_band_limited(N, 2, N // 2 - 1, np.random.default_rng(seed)) + 3.0
    back = recover(EPS, spectral_apply(EPS, u)).values
    assert rel_l2(back, u - u.mean(axis=(0, 1))) <= 1e-10


def test_recover_preconditions():
    g = spectral_apply(EPS, random_band_limited(16, 2, 5, np.random.default_rng(0)))
    with pytest.raises(ValueError):
        recover(EPS, g.values + 1.0)
    with pytest.raises(NotEllipticError):
        recover(make_builtin("div", 2), g.values[..., :1])
    with pytest.raises(ValueError):
        recover(EPS, g.values[..., :2])


def test_rigid_fields_have_zero_strain():
    # the only periodic rigid motions are constants
    u = np.ones((16, 16, 2)) * np.array([2.0, -1.0])
    np.testing.assert_allclose(spectral_apply(EPS, u).values, 0.0, atol=1e-12)
    with pytest.raises(DegenerateFieldError):
        korn_ratio(EPS, u, 2)


def test_korn_shear_at_p2():
    assert korn_ratio(EPS, shear(64), 2) == pytest.approx(np.sqrt(2), abs=1e-9)
    assert p2_bound(EPS) == pytest.approx(np.sqrt(2), abs=1e-9)


def test_korn_random_fields_stay_below_p2_bound():
    rng = np.random.default_rng(0)
    worst = max(korn_ratio(EPS, random_band_limited(16, 2, 7, rng), 2) for _ in range(300))
    assert worst <= np.sqrt(2) + 1e-6


def test_korn_ratio_is_scale_invariant():
    u = random_band_limited(16, 2, 5, np.random.default_rng(1))
    for p in (1, 2, 4):
        assert korn_ratio(EPS, 7.5 * u, p) == pytest.approx(korn_ratio(EPS, u, p), rel=1e-12)


def test_band_limit_and_upsample():
    u = random_band_limited(16, 2, 4, np.random.default_rng(2))
    np.testing.assert_allclose(band_limit(u, 4), u, atol=1e-13)
    up = upsample(u, 32).values
    np.testing.assert_allclose(up[::2, ::2], u, atol=1e-13)
    assert korn_ratio(EPS, up, 1) == pytest.approx(korn_ratio(EPS, u, 1), rel=2e-2)
    with pytest.raises(ValueError):
        upsample(u, 8)


def test_torus_field_checks():
    with pytest.raises(ValueError):
        TorusField(np.zeros((4, 5, 2)))
    assert TorusField(np.zeros((4, 4))).dim == 1
    assert not TorusField(np.ones((4, 4, 1))).zero_mean
    assert TorusField(np.ones((4, 4, 1))).centered().zero_mean


def test_ornstein_short_run_is_monotone_and_deterministic(tmp_path):
    a = ornstein_search(EPS, N=32, budget=90, seed=4)
    b = ornstein_search(EPS, N=32, budget=90, seed=4)
    best = [r for _, r, _ in a.entries]
    assert np.all(np.diff(best) >= 0)
    assert a.entries == b.entries
    assert a.best_ratio >= a.initial_ratio
    a.to_csv(tmp_path / "t.csv")
    data = (tmp_path / "t.csv").read_bytes()
    assert data.startswith(b"iter,ratio,N\n") and b"\r" not in data


def test_ornstein_is_vacuous_for_the_full_gradient():
    t = ornstein_search("grad", N=16, budget=10)
    assert t.vacuous and t.best_ratio == pytest.approx(1.0, abs=1e-12)


def test_ornstein_rejects_p_other_than_one():
    with pytest.raises(ValueError):
        ornstein_search(EPS, p=2)


def test_spectral_recovery_estimator():
    u = random_band_limited(32, 2, 10, np.random.default_rng(5))
    est = SpectralRecovery("eps")
    g = spectral_apply(EPS, u).values
    est.fit(g)
    assert est.ellipticity_margin_ == pytest.approx(1 / np.sqrt(2), abs=1e-9)
    assert rel_l2(est.transform(g), u) <= 1e-10
    np.testing.assert_allclose(est.inverse_transform(u), g, atol=1e-12)
    assert clone(est).get_params() == {"operator": "eps"}
    with pytest.raises(NotEllipticError):
        SpectralRecovery("div").fit(np.zeros((8, 8, 1)))
