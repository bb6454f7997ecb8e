"""Stabilised minimisation of linear-growth energies on square grids.

The discrete energy of a nodal field ``u`` with pinned boundary values is::

    F[u]      = sum_x w(x) f(A_h u(x))
    F_stab[u] = F[u] + delta/2 sum_x w(x) |grad_h u(x)|^2          (viscosity)
              = F[u] + alpha   sum_x w(x) (1 + |A_h u(x)|^p)        (p-stabilisation)

with central differences (one-sided on the edge ring) and tensor trapezoid
weights ``w``.  With these weights the discrete mean of ``A_h u`` depends only
on the boundary values, so affine data are exact discrete minimisers.
"""
from __future__ import annotations

import dataclasses
import time
from functools import cached_property
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import eigsh, spsolve
from sklearn.base import BaseEstimator

from .grid import Field, Grid, bmo_seminorm, derivative_matrix, lp_norm, mollify
from .integrands import Integrand, convexity_and_gradient_check, get_integrand
from .operators import FirstOrderOperator, get_operator, make_builtin

__all__ = [
    "Problem",
    "SolveReport",
    "SweepResult",
    "EkelandCertificate",
    "SolverError",
    "NonFiniteEnergy",
    "energy",
    "minimize_stabilized",
    "viscosity_sweep",
    "el_residual",
    "mean_strain",
    "infimum_lower_bound",
    "ekeland_certificate",
    "StabilizedMinimizer",
]

_BUILTIN_PREFIXES = ("mp:", "norm")


class SolverError(RuntimeError):
    pass


class NonFiniteEnergy(SolverError, ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class Problem:
    """Dirichlet problem for ``F_stab`` on a square grid.

    Exactly one stabilisation is active: ``delta > 0`` (viscosity) or
    ``alpha > 0`` with exponent ``p >= 2``.
    """

    grid: Grid
    integrand: Integrand
    u0: Field
    operator: Optional[FirstOrderOperator] = None
    delta: Optional[float] = None
    alpha: Optional[float] = None
    p: float = 2.0
    gtol: float = 1e-9
    max_iter: int = 5000
    memory: int = 10
    max_linesearch: int = 50
    seed: int = 0

    def __post_init__(self):
        op = make_builtin("eps", 2) if self.operator is None else get_operator(self.operator)
        object.__setattr__(self, "operator", op)
        if op.n != 2 or op.dim_V != 2:
            raise ValueError("the solver works with 2D vector fields")
        if self.integrand.dim != op.dim_W:
            raise ValueError(f"integrand dim {self.integrand.dim} does not match operator target {op.dim_W}")
        if self.grid.domain != "unit_square":
            raise ValueError("the solver supports the square domain only")
        if self.u0.grid != self.grid or self.u0.dim != 2:
            raise ValueError("u0 must be a 2-component field on the problem grid")
        if not np.all(np.isfinite(self.u0.values)):
            raise ValueError("u0 must be finite")
        visc = self.delta is not None and self.delta > 0
        pstab = self.alpha is not None and self.alpha > 0
        if visc == pstab:
            raise ValueError("set exactly one of delta > 0 or alpha > 0")
        if pstab and self.p < 2:
            raise ValueError("p-stabilisation needs p >= 2")
        if self.gtol <= 0 or self.max_iter < 1:
            raise ValueError("gtol must be positive and max_iter >= 1")

    @property
    def stabilization(self) -> str:
        return "viscosity" if self.delta is not None and self.delta > 0 else "p"

    @cached_property
    def _discretization(self):
        return _Discretization(self)

    def replace(self, **changes) -> "Problem":
        if "delta" in changes and changes["delta"] is not None:
            changes.setdefault("alpha", None)
        return dataclasses.replace(self, **changes)


class _Discretization:
    # flattened node index i*N + j; axis 0 is x1
    def __init__(self, problem: Problem):
        g = problem.grid
        N = g.N
        D1 = derivative_matrix(N, g.h)
        eye = sparse.identity(N, format="csr")
        self.D = [sparse.kron(D1, eye, format="csr"), sparse.kron(eye, D1, format="csr")]
        self.DT = [d.T.tocsr() for d in self.D]
        self.w = g.weights.ravel()
        self.coeffs = problem.operator.coeffs
        self.N = N
        interior = np.zeros((N, N), dtype=bool)
        interior[1:-1, 1:-1] = True
        self.free = interior.ravel()
        self.free_dofs = np.repeat(self.free, 2)
        self.A_h = sum(sparse.kron(d, sparse.csr_matrix(Aj), format="csr") for d, Aj in zip(self.D, self.coeffs))
        self.problem = problem

    def derivatives(self, U):
        return [d @ U for d in self.D]

    def strain(self, U, dU=None):
        dU = self.derivatives(U) if dU is None else dU
        return sum(dUj @ Aj.T for dUj, Aj in zip(dU, self.coeffs))

    def strain_adjoint(self, G):
        return sum(dt @ (G @ Aj) for dt, Aj in zip(self.DT, self.coeffs))

    def evaluate(self, U, need_grad=True):
        """Return ``(F_stab, F, gradient (nodes, 2) or None)``."""
        pb = self.problem
        f = pb.integrand
        dU = self.derivatives(U)
        Z = self.strain(U, dU)
        F = float(self.w @ f.value(Z))
        if pb.stabilization == "viscosity":
            stab = 0.5 * pb.delta * float(sum(self.w @ np.sum(d * d, axis=-1) for d in dU))
        else:
            r = np.linalg.norm(Z, axis=-1)
            stab = pb.alpha * float(self.w @ (1.0 + r**pb.p))
        Fs = F + stab
        if not (np.isfinite(Fs)):
            raise NonFiniteEnergy(f"energy is not finite for integrand {f.name!r}")
        if not need_grad:
            return Fs, F, None
        G = f.gradient(Z)
        if pb.stabilization == "p":
            G = G + pb.alpha * pb.p * (r ** (pb.p - 2))[:, None] * Z
        g = self.strain_adjoint(G * self.w[:, None])
        if pb.stabilization == "viscosity":
            g = g + pb.delta * sum(dt @ (d * self.w[:, None]) for dt, d in zip(self.DT, dU))
        return Fs, F, g

    def hessian(self, U):
        """Sparse Hessian of ``F_stab`` over all nodal dofs (``node*2 + component``)."""
        pb = self.problem
        Z = self.strain(U)
        nodes, W = Z.shape
        Hn = pb.integrand.hessian(Z)
        if pb.stabilization == "p":
            r = np.linalg.norm(Z, axis=-1)
            zhat = Z / np.where(r > 0, r, 1.0)[:, None]
            outer = zhat[:, :, None] * zhat[:, None, :]
            Hn = Hn + pb.alpha * pb.p * (r ** (pb.p - 2))[:, None, None] * (np.eye(W) + (pb.p - 2) * outer)
        Hn = Hn * self.w[:, None, None]
        B = sparse.bsr_matrix((Hn, np.arange(nodes), np.arange(nodes + 1)), shape=(nodes * W, nodes * W))
        H = self.A_h.T @ B @ self.A_h
        if pb.stabilization == "viscosity":
            Wd = sparse.diags(self.w)
            L = sum(dt @ Wd @ d for dt, d in zip(self.DT, self.D))
            H = H + pb.delta * sparse.kron(L, sparse.identity(2))
        return H.tocsr()

    def stabilizer_modulus(self) -> float:
        """Smallest eigenvalue of the stabiliser Hessian on the free nodes (0 if not constant)."""
        pb = self.problem
        idx = np.flatnonzero(self.free)
        W = sparse.diags(self.w)
        if pb.stabilization == "viscosity":
            L = sum(dt @ W @ d for dt, d in zip(self.DT, self.D))
            L = L[idx][:, idx]
            scale = pb.delta
        elif pb.p == 2:
            A = self.A_h
            L = A.T @ sparse.kron(W, sparse.identity(self.coeffs.shape[1])) @ A
            cols = (idx[:, None] * 2 + np.arange(2)).ravel()
            L = L[cols][:, cols]
            scale = 2.0 * pb.alpha
        else:
            return 0.0
        if L.shape[0] == 0:
            return 0.0
        if L.shape[0] < 50:
            lam = np.linalg.eigvalsh(L.toarray())[0]
        else:
            lam = eigsh(L.tocsc(), k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0]
        return float(scale * max(lam, 0.0))


def _disc(problem: Problem) -> _Discretization:
    return problem._discretization


def _nodal(u) -> np.ndarray:
    v = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    return v.reshape(-1, 2)


def energy(problem: Problem, u) -> tuple:
    """``(F_stab[u], F[u])``."""
    Fs, F, _ = _disc(problem).evaluate(_nodal(u), need_grad=False)
    return Fs, F


def _grad_scale(problem) -> float:
    # discrete W^{1,inf} norm of a unit hat function
    return max(1.0, 1.0 / problem.grid.h)


def el_residual(problem: Problem, u) -> float:
    """``max_phi |<F_stab'(u), phi>| / ||phi||_{W^{1,inf}}`` over interior hat functions."""
    d = _disc(problem)
    _, _, g = d.evaluate(_nodal(u))
    gi = g[d.free]
    return float(np.abs(gi).max() / _grad_scale(problem)) if gi.size else 0.0


def mean_strain(problem: Problem, u) -> np.ndarray:
    """Quadrature of ``A_h u``; fixed by the boundary values."""
    d = _disc(problem)
    return d.w @ d.strain(_nodal(u))


@dataclass
class SolveReport:
    u: Field
    trajectory: list  # (iteration, F_stab, F)
    grad_norm: float
    el_residual: float
    converged: bool
    message: str
    iterations: int
    wall_clock: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.trajectory[-1][1]

    @property
    def unstabilized_energy(self) -> float:
        return self.trajectory[-1][2]

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "converged": self.converged,
            "message": self.message,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "el_residual": self.el_residual,
            "energy": self.energy,
            "unstabilized_energy": self.unstabilized_energy,
            "trajectory": [list(t) for t in self.trajectory],
            "diagnostics": self.diagnostics,
        }
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out


def minimize_stabilized(problem: Problem, init=None, snapshot_every: int = 10,
                        polish_steps: int = 8) -> SolveReport:
    """Minimise ``F_stab`` over fields equal to ``u0`` on the boundary ring.

    Uses L-BFGS with a Wolfe line search on the interior nodal values; the
    boundary values are copied from ``u0`` and never touched.  Energy
    differences stop resolving the gradient near ``|g| ~ sqrt(eps_mach)``, so
    L-BFGS is followed by sparse Newton steps (also after convergence, down to
    roundoff) that are accepted while the gradient shrinks and the energy does not rise by more than 1e-12.  ``init``
    (a field or array) replaces the interior starting values.  Stationarity is
    the max-norm of the nodal gradient.  Every ``snapshot_every`` iterations the
    Euler-Lagrange residual is recorded in ``diagnostics["el_snapshots"]``.
    """
    t0 = time.perf_counter()
    d = _disc(problem)
    U = _nodal(problem.u0).copy()
    if init is not None:
        U[d.free] = _nodal(init)[d.free]
    free = d.free

    def fun(x):
        U[free] = x.reshape(-1, 2)
        Fs, _, g = d.evaluate(U)
        return Fs, g[free].ravel()

    traj = []
    snaps = []
    state = {"it": 0}

    def record(x):
        U[free] = x.reshape(-1, 2)
        Fs, F, g = d.evaluate(U)
        traj.append((state["it"], Fs, F))
        if state["it"] % snapshot_every == 0:
            snaps.append((state["it"], float(np.abs(g[free]).max() / _grad_scale(problem)) if free.any() else 0.0))
        return g

    x0 = U[free].ravel().copy()
    record(x0)

    def cb(xk):
        state["it"] += 1
        record(xk)

    res = minimize(
        fun, x0, jac=True, method="L-BFGS-B", callback=cb,
        options={"maxiter": problem.max_iter, "maxcor": problem.memory, "gtol": problem.gtol,
                 "ftol": 0.0, "maxls": problem.max_linesearch, "maxfun": 20 * problem.max_iter},
    )
    U[free] = res.x.reshape(-1, 2)
    Fs, F, g = d.evaluate(U)
    if Fs > traj[-1][1] + 1e-12:
        raise SolverError("line search returned an iterate above the last accepted energy")
    if (Fs, F) != traj[-1][1:]:
        traj.append((state["it"], Fs, F))
    gnorm = float(np.abs(g[free]).max()) if free.any() else 0.0
    dofs = d.free_dofs
    # the Newton steps count against the same iteration budget
    budget = max(0, problem.max_iter - state["it"]) if free.any() else 0
    for _ in range(min(polish_steps, budget)):
        if gnorm == 0.0:
            break
        H = d.hessian(U)[dofs][:, dofs]
        if not np.all(np.isfinite(H.data)):
            break
        step = spsolve(H.tocsc(), -g[free].ravel())
        if not np.all(np.isfinite(step)):
            break
        trial = U.copy()
        trial[free] += step.reshape(-1, 2)
        Ft, Ff, gt = d.evaluate(trial)
        gt_norm = float(np.abs(gt[free]).max())
        if Ft > Fs + 1e-12 or gt_norm >= gnorm:
            break
        U, Fs, F, g, gnorm = trial, Ft, Ff, gt, gt_norm
        state["it"] += 1
        traj.append((state["it"], Fs, F))
        if state["it"] % snapshot_every == 0:
            snaps.append((state["it"], gnorm / _grad_scale(problem)))
    converged = gnorm <= problem.gtol
    msg = "converged" if converged else f"not converged: {res.message}"
    u = Field(problem.grid, U.reshape(problem.grid.N, problem.grid.N, 2).copy())
    rep = SolveReport(
        u=u,
        trajectory=traj,
        grad_norm=gnorm,
        el_residual=gnorm / _grad_scale(problem),
        converged=converged,
        message=msg,
        iterations=state["it"],
        wall_clock=time.perf_counter() - t0,
        diagnostics={"el_snapshots": snaps},
    )
    return rep


def _check_user_integrand(f: Integrand):
    if f.name.startswith(_BUILTIN_PREFIXES):
        return
    rep = convexity_and_gradient_check(f)
    if not rep.ok:
        raise ValueError(f"integrand {f.name!r} failed the convexity/gradient check: {rep.first_violation}")


@dataclass
class SweepResult:
    deltas: list
    reports: list
    summary: list  # one dict per delta
    checks: dict
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "deltas": list(self.deltas),
            "summary": self.summary,
            "checks": self.checks,
            "aborted": self.aborted,
        }


def viscosity_sweep(
    problem: Problem,
    deltas=(1e-1, 1e-2, 1e-3, 1e-4),
    q_list=(1.5, 2.0),
    bmo_region=(0.25, 0.75, 0.25, 0.75),
    l1_factor: float = 1.1,
    monotone_tol: float = 1e-8,
) -> SweepResult:
    """Solve for decreasing viscosities, warm-starting each solve from the previous one."""
    deltas = [float(x) for x in deltas]
    if any(x <= 0 for x in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be positive and strictly decreasing")
    _check_user_integrand(problem.integrand)
    reports, summary = [], []
    prev = None
    aborted = False
    for delta in deltas:
        pb = problem.replace(delta=delta, alpha=None)
        rep = minimize_stabilized(pb, init=prev)
        entry = {"delta": delta, "converged": rep.converged}
        if prev is not None:
            entry["warm_start_energy"] = energy(pb, prev)[0]
        eu = Field(pb.grid, _disc(pb).strain(_nodal(rep.u)).reshape(pb.grid.N, pb.grid.N, -1))
        entry.update({
            "F": rep.unstabilized_energy,
            "F_stab": rep.energy,
            "L1": lp_norm(eu, 1.0),
            **{f"L{q:g}": lp_norm(eu, q) for q in q_list},
            "bmo": bmo_seminorm(rep.u, bmo_region),
            "sup": float(np.abs(rep.u.values).max()),
        })
        summary.append(entry)
        reports.append(rep)
        if not rep.converged:
            aborted = True
            break
        prev = rep.u
    F = [s["F"] for s in summary]
    L1 = [s["L1"] for s in summary]
    checks = {
        "F_nonincreasing": bool(all(b <= a + monotone_tol for a, b in zip(F, F[1:]))),
        "L1_ratio": float(max(L1) / min(L1)) if min(L1) > 0 else float("inf"),
        "warm_start_monotone": bool(all(
            s["F_stab"] <= s["warm_start_energy"] + 1e-12 for s in summary if "warm_start_energy" in s)),
    }
    checks["L1_bounded"] = checks["L1_ratio"] <= l1_factor
    return SweepResult(deltas[: len(summary)], reports, summary, checks, aborted)


# ---------------------------------------------------------------------------
# Ekeland certificate


def infimum_lower_bound(problem: Problem, u) -> tuple:
    """``(lower bound on inf F_stab, F_stab[u])`` from strong convexity of the stabiliser.

    With modulus ``m`` of the stabiliser, ``inf F_stab >= F_stab[u] - |g|^2/(2m)``.
    """
    d = _disc(problem)
    Fs, _, g = d.evaluate(_nodal(u))
    m = d.stabilizer_modulus()
    gg = float(np.sum(g[d.free] ** 2))
    if m <= 0:
        return -np.inf, Fs
    return Fs - gg / (2.0 * m), Fs


@dataclass
class EkelandCertificate:
    certified: bool
    worst_violation: float
    worst_witness: str
    trials: int
    eps_level: float
    rounding_floor: float
    witness_field: Optional[Field] = None

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "worst_violation": self.worst_violation,
            "worst_witness": self.worst_witness,
            "trials": self.trials,
            "eps_level": self.eps_level,
            "rounding_floor": self.rounding_floor,
        }


def _l1_distance(grid, a, b) -> float:
    return float(np.sum(grid.weights * np.linalg.norm(a - b, axis=-1)))


def ekeland_certificate(problem: Problem, v, eps_level: float, trials: int = 20, seed: int = 0) -> EkelandCertificate:
    """Test ``F_stab[v] <= F_stab[w] + sqrt(eps) d(v, w)`` on sampled competitors ``w``.

    ``d`` is the discrete L^1 distance.  Competitors: smooth interior
    perturbations of ``v`` over several amplitudes and frequencies, points on
    the segments to ``u0`` and to a mollification of ``v``, and
    steepest-descent steps.  Energy differences below
    ``4 eps_mach max(|F|, 1)`` are treated as rounding.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if eps_level < 0:
        raise ValueError("eps_level must be nonnegative")
    grid = problem.grid
    d = _disc(problem)
    V = v.values if isinstance(v, Field) else np.asarray(v, dtype=float)
    V = V.reshape(grid.N, grid.N, 2)
    Fv, _, g = d.evaluate(V.reshape(-1, 2))
    floor = 4.0 * np.finfo(float).eps * max(abs(Fv), 1.0)
    root = np.sqrt(eps_level)
    rng = np.random.default_rng(seed)
    X1, X2 = grid.coords
    s1 = (X1 - grid.origin[0]) / grid.length
    s2 = (X2 - grid.origin[1]) / grid.length
    envelope = np.sin(np.pi * s1) * np.sin(np.pi * s2)
    interior = d.free.reshape(grid.N, grid.N)
    scale = max(float(np.abs(V).max()), 1.0)

    candidates = []
    for _ in range(trials):
        k1, k2 = rng.integers(1, max(2, grid.N // 4), size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        pert = np.stack([np.sin(np.pi * k1 * s1 + ph[0]) * np.sin(np.pi * k2 * s2 + ph[1]),
                         np.cos(np.pi * k2 * s1 + ph[1]) * np.sin(np.pi * k1 * s2 + ph[0])], axis=-1)
        for amp in (1e-6, 1e-4, 1e-2, 1e0):
            candidates.append((f"perturbation k=({k1},{k2}) amp={amp:g}",
                               V + amp * scale * envelope[..., None] * pert))
    targets = [("u0", problem.u0.values)]
    radius = max(2 * grid.h, 0.05 * grid.length)
    mv = mollify(Field(grid, V), radius)
    targets.append(("mollified", np.where(mv.support[..., None], mv.values, V)))
    for name, T in targets:
        for t in (1e-6, 1e-3, 1e-1, 0.5, 1.0):
            W = V + t * (T - V)
            W[~interior] = V[~interior]
            candidates.append((f"segment to {name} t={t:g}", W))
    G = np.zeros_like(V)
    G[interior] = g.reshape(grid.N, grid.N, 2)[interior]
    gmax = float(np.abs(G).max())
    if gmax > 0:
        for s in 10.0 ** np.arange(-8, 3):
            candidates.append((f"descent step s={s:g}", V - (s / gmax) * scale * G))

    worst, witness, witness_field = -np.inf, "", None
    for name, W in candidates:
        Fw, _, _ = d.evaluate(W.reshape(-1, 2), need_grad=False)
        viol = Fv - Fw - root * _l1_distance(grid, V, W)
        if viol > worst:
            worst, witness, witness_field = viol, name, W
    return EkelandCertificate(
        certified=bool(worst <= floor),
        worst_violation=float(worst),
        worst_witness=witness,
        trials=trials,
        eps_level=float(eps_level),
        rounding_floor=float(floor),
        witness_field=Field(grid, witness_field),
    )


# ---------------------------------------------------------------------------
# estimator


class StabilizedMinimizer(BaseEstimator):
    """Estimator front end: ``fit(u0)`` solves the Dirichlet problem with datum ``u0``.

    Parameters
    ----------
    integrand : str or Integrand, default="mp:2"
    operator : str, default="eps"
    delta : float or None, default=0.1
        Viscosity; ignored when ``alpha`` is set.
    alpha : float or None, default=None
    p : float, default=2.0
    gtol : float, default=1e-9
    max_iter : int, default=5000

    Attributes
    ----------
    u_ : Field
        Minimiser.
    report_ : SolveReport
    problem_ : Problem
    """

    def __init__(self, integrand="mp:2", operator="eps", delta=0.1, alpha=None, p=2.0,
                 gtol=1e-9, max_iter=5000):
        self.integrand = integrand
        self.operator = operator
        self.delta = delta
        self.alpha = alpha
        self.p = p
        self.gtol = gtol
        self.max_iter = max_iter

    def _problem(self, u0: Field) -> Problem:
        op = get_operator(self.operator, 2)
        f = self.integrand if isinstance(self.integrand, Integrand) else get_integrand(self.integrand, op.dim_W)
        _check_user_integrand(f)
        stab = {"alpha": self.alpha, "p": self.p} if self.alpha else {"delta": self.delta}
        return Problem(u0.grid, f, u0, op, gtol=self.gtol, max_iter=self.max_iter, **stab)

    def fit(self, X, y=None, init=None):
        if not isinstance(X, Field):
            raise TypeError("fit expects the boundary datum as a Field")
        self.problem_ = self._problem(X)
        self.report_ = minimize_stabilized(self.problem_, init=init)
        self.u_ = self.report_.u
        self.converged_ = self.report_.converged
        return self

    def score(self, X=None, y=None) -> float:
        """Negative stabilised energy of the fitted minimiser."""
        return -self.report_.energy
