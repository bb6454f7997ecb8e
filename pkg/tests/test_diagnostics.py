import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symconvex.diagnostics import (
    caccioppoli_ratio,
    excess_scan,
    nikolskii_quotient,
    smoothstep_cutoff,
)
from symconvex.grid import Grid, RigidMotion
from symconvex.integrands import make_mp

M2 = make_mp(2)


def smooth_field(grid):
    return grid.field(lambda x, y: (np.sin(2 * np.pi * x) * np.cos(np.pi * y), 0.5 * np.sin(np.pi * (x + 2 * y))))


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_rigid_field_is_degenerate(a, b1, b2):
    g = Grid(33)
    u = RigidMotion(a, np.array([b1, b2])).field(g)
    res = caccioppoli_ratio(u, 1.0, [(0.5, 0.5)], [0.1, 0.2])
    assert res.degenerate and np.isnan(res.max_ratio)
    assert all(t["degenerate"] for t in res.table)


def test_affine_ratio_is_translation_invariant_on_node_aligned_centers():
    g = Grid(65)
    u = g.field(lambda x, y: (0.4 * x + 0.3 * y, -0.1 * x + 0.2 * y))
    centers = [(0.5, 0.5), (0.375, 0.5), (0.5, 0.625), (0.625, 0.375)]
    res = caccioppoli_ratio(u, 1.0, centers, [0.0625])
    ratios = [t["ratio"] for t in res.table]
    assert np.isfinite(ratios).all() and not res.degenerate
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-10)


def test_affine_ratio_numerator_closed_form():
    g = Grid(65)
    u = g.field(lambda x, y: (0.4 * x + 0.3 * y, -0.1 * x + 0.2 * y))
    t = caccioppoli_ratio(u, 1.0, [(0.5, 0.5)], [0.125]).table[0]
    sym = np.array([[0.4, 0.1], [0.1, 0.2]])
    assert t["numerator"] == pytest.approx(np.linalg.norm(sym), rel=1e-12)


def test_caccioppoli_rejects_balls_outside():
    g = Grid(17)
    with pytest.raises(ValueError):
        caccioppoli_ratio(smooth_field(g), 1.0, [(0.1, 0.5)], [0.1])
    with pytest.raises(ValueError):
        caccioppoli_ratio(smooth_field(g), 0.5, [(0.5, 0.5)], [0.1])


def test_smoothstep_cutoff_shape():
    g = Grid(41)
    rho = smoothstep_cutoff(g, (0.25, 0.75, 0.25, 0.75))
    X1, X2 = g.coords
    inside = (X1 >= 0.25) & (X1 <= 0.75) & (X2 >= 0.25) & (X2 <= 0.75)
    assert np.all(rho[inside] == 1.0)
    assert np.all(rho[0] == 0) and np.all(rho[:, -1] == 0)
    assert rho.min() >= 0 and rho.max() <= 1
    with pytest.raises(ValueError):
        smoothstep_cutoff(g, (0.0, 0.5, 0.2, 0.8))


def test_nikolskii_of_constant_is_zero():
    g = Grid(33)
    s = nikolskii_quotient(g.field(lambda x, y: (np.ones_like(x), 2 + 0 * x)))
    assert np.all(s.Q == 0)


@pytest.mark.parametrize("theta", [0.3, 0.7])
def test_nikolskii_slope_of_smooth_field(theta):
    s = nikolskii_quotient(smooth_field(Grid(129)), mu=1.5, theta=theta)
    assert abs(s.slope - (2 - 2 * theta)) <= 0.2
    assert np.all(np.diff(s.Q) > 0)  # Q decreases as h decreases
    assert s.to_dict()["theta"] == theta


def test_nikolskii_validation():
    g = Grid(17)
    with pytest.raises(ValueError):
        nikolskii_quotient(smooth_field(g), theta=1.0)
    with pytest.raises(ValueError):
        nikolskii_quotient(smooth_field(g), h_steps=(1, 17))


def test_excess_of_affine_field_is_zero_and_regular():
    g = Grid(33)
    u = g.field(lambda x, y: (0.4 * x + 0.3 * y, -0.1 * x + 0.2 * y))
    m = excess_scan(u, M2)
    assert np.abs(m.excess).max() < 1e-12
    assert m.regular_fraction == 1.0
    assert m.notes


def test_excess_of_a_kink_approaches_half_the_gap():
    # u1 = |x1 - 1/2|: the strain jumps between e11 = -1 and e11 = 1, so balls
    # centred on the kink average two values with equal weights: excess -> 1
    ex = []
    for N in (64, 128, 256, 512):
        g = Grid(N)
        u = g.field(lambda x, y: (np.abs(x - 0.5), 0 * x))
        m = excess_scan(u, M2, radii=(0.1,), centers=[(0.5, 0.5)])
        assert not m.regular[0]
        ex.append(m.excess[0, 0])
        assert 1 - 8 * g.h <= ex[-1] <= 1 + 1e-12
    assert np.all(np.diff(ex) > 0)


def test_excess_rejects_dimension_mismatch():
    g = Grid(17)
    with pytest.raises(ValueError):
        excess_scan(smooth_field(g), make_mp(2, dim=4))
