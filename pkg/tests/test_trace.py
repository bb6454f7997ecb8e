import numpy as np
import pytest
from scipy.special import ellipkm1

from symconvex.grid import Grid
from symconvex.operators import apply, make_builtin
from symconvex.trace import disk_integral, pole_field, ring_integral, trace_blowup, tracefree_residual


def ring_oracle(r):
    # I(r) = 4 r K(m) / (1 + r) with m = (2 sqrt(r) / (1 + r))^2, 1 - m = ((1 - r)/(1 + r))^2
    r = np.asarray(r, dtype=float)
    return 4 * r * ellipkm1(((1 - r) / (1 + r)) ** 2) / (1 + r)


def test_ring_integral_matches_elliptic_oracle():
    r = np.array([0.0, 0.1, 0.5, 0.9, 0.99, 0.999, 0.999999])
    np.testing.assert_allclose(ring_integral(r), ring_oracle(r), rtol=1e-12, atol=1e-15)


def test_ring_integral_small_radius_limit():
    # |r e^{i t} - 1| -> 1, so I(r) ~ 2 pi r
    assert ring_integral(1e-6)[0] == pytest.approx(2 * np.pi * 1e-6, rel=1e-5)


def test_ring_integral_rejects_closed_circle():
    with pytest.raises(ValueError):
        ring_integral(1.0)


def test_disk_integral_is_four():
    # int_0^1 I(r) dr = 4 (closed form)
    assert disk_integral(256) == pytest.approx(4.0, abs=1e-10)
    assert abs(disk_integral(512) - disk_integral(256)) <= 1e-6 * 4


def test_pole_field_is_in_the_tracefree_kernel():
    # holomorphic u1 + i u2 gives eps^D u = 0 up to O(h^2)
    g = Grid(65, "unit_disk", origin=(-1, -1), length=2.0)
    u = pole_field(g)
    e = apply(make_builtin("eps_dev", 2), u)
    X1, X2 = g.coords
    inner = np.hypot(X1, X2) <= 0.5
    assert np.linalg.norm(e.values[inner], axis=-1).max() < 0.1
    full = apply(make_builtin("eps", 2), u)
    assert np.linalg.norm(full.values[inner], axis=-1).max() > 0.5


def test_tracefree_residual_second_order():
    r = [tracefree_residual(N, 0.9, coarse=65) for N in (65, 129, 257)]
    orders = np.log2(np.array(r[:-1]) / r[1:])
    assert np.all(orders >= 1.8)
    with pytest.raises(ValueError):
        tracefree_residual(100, 0.9, coarse=65)


def test_trace_blowup_report():
    rep = trace_blowup()
    assert rep.strictly_increasing and rep.ring_converged and rep.area_converged
    assert abs(rep.slope - 2) <= 0.4
    assert rep.area == pytest.approx(4.0, abs=1e-9)
    assert min(rep.orders) >= 1.8
    d = rep.to_dict()
    assert d["ring_strictly_increasing"] and len(d["ring_integrals"]) == 4


@pytest.mark.parametrize("kwargs", [
    {"radii": (0.9, 0.5)},
    {"radii": (0.5, 1.0)},
    {"n_theta": 64},
    {"fit_last": 1},
])
def test_trace_blowup_validation(kwargs):
    with pytest.raises(ValueError):
        trace_blowup(**kwargs)
