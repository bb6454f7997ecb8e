"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import numpy as np

from symconvex.diagnostics import caccioppoli_ratio, excess_scan, nikolskii_quotient
from symconvex.grid import Grid, RigidMotion
from symconvex.integrands import make_mp, mu_check, recession
from symconvex.operators import ellipticity_margin, kk_reduction, make_builtin
from symconvex.relaxed import BVPiecewise1D, relaxed_energy_1d
from symconvex.solver import (
    Problem,
    ekeland_certificate,
    infimum_lower_bound,
    minimize_stabilized,
    viscosity_sweep,
)
from symconvex.spectral import (
    TorusField,
    korn_ratio,
    ornstein_search,
    random_band_limited,
    recover,
    spectral_apply,
)
from symconvex.trace import trace_blowup

RESULTS = []


def verdict(number, title, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_01_ellipticity_margins():
    eps = ellipticity_margin(make_builtin("eps", 2)).min_singular_value
    dev = ellipticity_margin(make_builtin("eps_dev", 2)).min_singular_value
    div = ellipticity_margin(make_builtin("div", 2)).min_singular_value
    r = 1 / np.sqrt(2)
    ok = abs(eps - r) <= 1e-6 and abs(dev - r) <= 1e-6 and abs(div) <= 1e-9
    verdict(1, "ellipticity margins", ok, f"eps={eps:.9f} eps_dev={dev:.9f} div={div:.1e}")


def test_02_kk_reduction():
    grad, eps = make_builtin("grad", 2), make_builtin("eps", 2)
    fwd = kk_reduction(grad, eps)
    sym = np.zeros((3, 4))
    sym[0, 0] = sym[1, 3] = 1.0
    sym[2, 1] = sym[2, 2] = 1 / np.sqrt(2)
    c_ok = fwd.C is not None and np.allclose(fwd.C, sym, atol=1e-12)
    back = kk_reduction(eps, grad)
    ok = fwd.exists and fwd.residual < 1e-12 and c_ok and not back.exists and back.residual > 1e-3
    verdict(2, "KK reduction", ok, f"grad->eps residual={fwd.residual:.1e} C=sym:{c_ok}; "
                                   f"eps->grad residual={back.residual:.5f}")


def test_03_mu_ellipticity():
    m2, m4 = make_mp(2), make_mp(4)
    a = mu_check(m2, 3.0, count=10_000, max_magnitude=1e4, seed=0)
    constants = abs(a.lambda_est - 1) <= 1e-6 and abs(a.Lambda_est - 1) <= 1e-6
    b = mu_check(m2, 2.0, count=10_000, max_magnitude=1e4, seed=0)
    B, A = b.worst_lower_pair
    cos = abs(B @ A) / (np.linalg.norm(B) * np.linalg.norm(A))
    c = mu_check(m4, 5.0, count=10_000, max_magnitude=1e4, min_magnitude=1.0, seed=0)
    ok = a.passed and constants and a.samples >= 10_000 and not b.passed and cos > 1 - 1e-9 and c.passed
    verdict(3, "mu-ellipticity", ok, f"m2/mu=3 lambda={a.lambda_est:.9f} Lambda={a.Lambda_est:.9f}; "
                                     f"m2/mu=2 fails, witness |cos|={cos:.12f}; m4/mu=5 on |B|>=1: {c.passed}")


def test_04_recession():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((100, 3)) * 10 ** rng.uniform(-3, 3, (100, 1))
    err = max(float(np.abs(recession(make_mp(p), Z) - np.linalg.norm(Z, axis=1)).max())
              for p in (1.5, 2.0, 3.0, 4.0))
    verdict(4, "recession of m_p", err <= 1e-6, f"max |f_inf(Z) - |Z|| = {err:.1e}")


def test_05_spectral_round_trip():
    eps = make_builtin("eps", 2)
    u = random_band_limited(64, 2, 24, np.random.default_rng(0)) + np.array([0.3, -1.2])
    back = recover(eps, spectral_apply(eps, u)).values
    target = u - u.mean(axis=(0, 1))
    err = np.linalg.norm(back - target) / np.linalg.norm(target)
    verdict(5, "spectral round trip", err <= 1e-10, f"relative L2 error {err:.1e} at N=64")


def test_06_korn_p2():
    eps = make_builtin("eps", 2)
    shear = TorusField.from_function(64, lambda x, y: (np.sin(2 * np.pi * y), 0 * x))
    r = korn_ratio(eps, shear, 2)
    rng = np.random.default_rng(0)
    worst = max(korn_ratio(eps, random_band_limited(32, 2, 8, rng, decay=1.0), 2) for _ in range(1000))
    ok = abs(r - np.sqrt(2)) <= 1e-9 and worst <= np.sqrt(2) + 1e-6
    verdict(6, "Korn at p=2", ok, f"shear ratio - sqrt2 = {r - np.sqrt(2):.1e}; max over 1000 fields {worst:.6f}")


def test_07_ornstein():
    eps = make_builtin("eps", 2)
    t = ornstein_search(eps, p=1, N=64, budget=2000, seed=0)
    at64 = t.best_ratio
    t = ornstein_search(eps, p=1, N=128, budget=300, seed=1, restarts=1, init=t.best_field, trace=t)
    best = np.array([r for _, r, _ in t.entries])
    monotone = bool(np.all(np.diff(best) >= 0))
    iters = len(t.entries)
    ok = at64 > np.sqrt(2) * 1.05 and monotone and t.best_at(128) >= t.best_at(64) and iters <= 5000
    verdict(7, "Ornstein demonstration", ok,
            f"best ratio {at64:.4f} at N=64 (target > {np.sqrt(2) * 1.05:.4f}), "
            f"{t.best_at(128):.4f} at N=128, trace monotone: {monotone}, iterations {iters}")


def test_08_relaxed_step():
    u = BVPiecewise1D([0.0, 1.0], [0.0], [(0.5, 1.0)], 0.0, (0.0, 0.0))
    e = relaxed_energy_1d(make_mp(2, dim=1), u)
    err = max(abs(e.ac - 1), abs(e.singular - 1), abs(e.boundary - 1), abs(e.total - 3))
    verdict(8, "relaxed step energy", err <= 1e-12,
            f"ac={e.ac} singular={e.singular} boundary={e.boundary} total={e.total}")


def test_09_jensen_affine_solver():
    worst_u = worst_el = 0.0
    monotone = converged = True
    A = np.array([[0.3, 0.5], [-0.2, 0.1]])
    for N in (17, 33, 65):
        g = Grid(N)
        u0 = g.field(lambda x, y: (A[0, 0] * x + A[0, 1] * y + 0.1, A[1, 0] * x + A[1, 1] * y - 0.4))
        init = u0.values + 0.05 * np.random.default_rng(N).standard_normal(u0.values.shape)
        for p in (1.5, 2.0, 4.0):
            for delta in (1e-1, 1e-3):
                rep = minimize_stabilized(Problem(g, make_mp(p), u0, delta=delta), init=init)
                worst_u = max(worst_u, float(np.abs(rep.u.values - u0.values).max()))
                worst_el = max(worst_el, rep.el_residual)
                F = np.array([t[1] for t in rep.trajectory])
                monotone &= bool(np.all(np.diff(F) <= 1e-12))
                converged &= rep.converged
    ok = worst_u <= 1e-6 and worst_el <= 1e-8 and monotone and converged
    verdict(9, "Jensen/affine solver", ok, f"max |u-u0| = {worst_u:.1e}, max el_residual = {worst_el:.1e}, "
                                          f"energies nonincreasing: {monotone}")


def test_10_viscosity_sweep():
    g = Grid(33)
    u0 = g.field(lambda x, y: (0.5 * y + 0.1 * np.sin(np.pi * y), 0.1 * np.sin(np.pi * x)))
    pb = Problem(g, make_mp(2), u0, delta=1e-1)
    sw = viscosity_sweep(pb, [1e-1, 1e-2, 1e-3, 1e-4])
    certified = []
    for rep, delta in zip(sw.reports, sw.deltas):
        p = pb.replace(delta=delta)
        lo, Fs = infimum_lower_bound(p, rep.u)
        certified.append(ekeland_certificate(p, rep.u, max(Fs - lo, 0.0), trials=10, seed=0).certified)
    ok = (not sw.aborted and sw.checks["F_nonincreasing"] and sw.checks["L1_ratio"] <= 1.1
          and all(certified) and len(certified) == 4)
    F = ", ".join(f"{s['F']:.8f}" for s in sw.summary)
    verdict(10, "viscosity sweep", ok, f"F = [{F}], L1 max/min = {sw.checks['L1_ratio']:.4f}, "
                                       f"Ekeland certified: {certified}")


def test_11_trace_blowup():
    rep = trace_blowup(radii=(0.5, 0.9, 0.99, 0.999), n_theta=256, fit_last=3, resolutions=(65, 129))
    area_change = abs(rep.area_refined - rep.area) / abs(rep.area_refined)
    ok = (area_change <= 1e-6 and rep.strictly_increasing and abs(rep.slope - 2) <= 0.4
          and min(rep.orders) >= 1.8)
    verdict(11, "trace blow-up", ok, f"area {rep.area_refined:.10f} (change {area_change:.1e}), "
                                     f"slope {rep.slope:.4f}, eps_D residual order {rep.orders[0]:.3f}")


def test_12_diagnostics():
    g = Grid(129)
    u = g.field(lambda x, y: (np.sin(2 * np.pi * x) * np.cos(np.pi * y), 0.5 * np.sin(np.pi * (x + 2 * y))))
    theta = 0.7
    slope = nikolskii_quotient(u, mu=1.5, theta=theta).slope
    rigid = RigidMotion(0.7, np.array([0.2, -1.0])).field(Grid(65))
    degenerate = caccioppoli_ratio(rigid, 1.0, [(0.5, 0.5)], [0.1, 0.2]).degenerate
    aff = Grid(33).field(lambda x, y: (0.4 * x + 0.3 * y, -0.1 * x + 0.2 * y))
    frac = excess_scan(aff, make_mp(2)).regular_fraction
    ok = abs(slope - (2 - 2 * theta)) <= 0.2 and degenerate and frac == 1.0
    verdict(12, "diagnostics coherence", ok, f"Nikolskii slope {slope:.3f} (target {2 - 2 * theta:.1f}), "
                                             f"rigid degenerate: {degenerate}, affine regular fraction {frac:.2f}")
