"""Regularity diagnostics for grid fields: Caccioppoli ratios, weighted
Nikolskii quotients and excess scans."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import Field, ball_mask, finite_difference, rigid_project
from .integrands import Integrand
from .operators import apply as apply_operator, make_builtin

__all__ = [
    "CaccioppoliResult",
    "NikolskiiSeries",
    "ExcessMap",
    "caccioppoli_ratio",
    "nikolskii_quotient",
    "smoothstep_cutoff",
    "excess_scan",
]

DEGENERATE_TOL = 1e-14


def _strain(u: Field, operator) -> Field:
    op = make_builtin("eps", 2) if operator is None else operator
    return apply_operator(op, u)


def _inside(grid, center, radius) -> bool:
    lo0, lo1 = grid.origin
    hi0, hi1 = lo0 + grid.length, lo1 + grid.length
    tol = 1e-12 * grid.length
    if grid.domain == "unit_square":
        return (center[0] - radius >= lo0 - tol and center[0] + radius <= hi0 + tol
                and center[1] - radius >= lo1 - tol and center[1] + radius <= hi1 + tol)
    c = grid.center
    return np.hypot(center[0] - c[0], center[1] - c[1]) + radius <= 0.5 * grid.length + tol


@dataclass
class CaccioppoliResult:
    max_ratio: float
    table: list
    degenerate: bool

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "degenerate": self.degenerate, "table": self.table}


def caccioppoli_ratio(u: Field, p_growth: float, centers, radii, operator=None) -> CaccioppoliResult:
    """``avg_{B(z,r)} |E_h u|^p / avg_{B(z,2r)} |(u - rigid fit)/r|^p`` per ball.

    Balls whose denominator is below 1e-14 (relative to the same average of
    ``|u/r|^p`` when that exceeds 1) are flagged degenerate and excluded
    from the maximum; ``degenerate`` is set when every ball is.
    """
    if p_growth < 1:
        raise ValueError("p_growth must be >= 1")
    grid = u.grid
    eu = np.linalg.norm(_strain(u, operator).values, axis=-1)
    table = []
    for z in np.atleast_2d(np.asarray(centers, dtype=float)):
        for r in np.atleast_1d(radii):
            r = float(r)
            if not _inside(grid, z, 2 * r):
                raise ValueError(f"ball B({tuple(z)}, {2 * r}) leaves the domain")
            inner = ball_mask(grid, z, r) & u.support
            outer = ball_mask(grid, z, 2 * r) & u.support
            if inner.sum() < 1 or outer.sum() < 3:
                raise ValueError(f"radius {r} is below the grid resolution")
            num = float(np.mean(eu[inner] ** p_growth))
            _, resid = rigid_project(u, outer)
            den = float(np.mean((np.linalg.norm(resid.values[outer], axis=-1) / r) ** p_growth))
            # the rigid fit leaves roundoff proportional to the field size
            size = float(np.mean((np.linalg.norm(u.values[outer], axis=-1) / r) ** p_growth))
            degenerate = den < DEGENERATE_TOL * max(1.0, size)
            table.append({
                "center": [float(z[0]), float(z[1])],
                "radius": r,
                "numerator": num,
                "denominator": den,
                "ratio": float("nan") if degenerate else num / den,
                "degenerate": bool(degenerate),
            })
    ratios = [t["ratio"] for t in table if not t["degenerate"]]
    return CaccioppoliResult(
        max_ratio=max(ratios) if ratios else float("nan"),
        table=table,
        degenerate=not ratios,
    )


def smoothstep_cutoff(grid, region) -> np.ndarray:
    """Tensor-product ``3t^2 - 2t^3`` cutoff: 1 on ``region``, 0 on a margin near the boundary.

    The transition band on each side is half the gap between the region and
    the domain edge.
    """
    x1lo, x1hi, x2lo, x2hi = region
    lo0, lo1 = grid.origin
    hi0, hi1 = lo0 + grid.length, lo1 + grid.length
    if not (lo0 < x1lo < x1hi < hi0 and lo1 < x2lo < x2hi < hi1):
        raise ValueError("cutoff region must lie strictly inside the square")

    def ramp(x, a, b, lo, hi):
        ma, mb = 0.5 * (a - lo), 0.5 * (hi - b)
        ta = np.clip((x - (a - ma)) / ma, 0.0, 1.0)
        tb = np.clip(((b + mb) - x) / mb, 0.0, 1.0)
        s = lambda t: t * t * (3.0 - 2.0 * t)  # noqa: E731
        return s(ta) * s(tb)

    X1, X2 = grid.coords
    return ramp(X1, x1lo, x1hi, lo0, hi0) * ramp(X2, x2lo, x2hi, lo1, hi1)


@dataclass
class NikolskiiSeries:
    h: np.ndarray
    Q: np.ndarray
    theta: float
    mu: float

    @property
    def spread(self) -> float:
        """``max Q / min Q`` (inf if some term vanishes)."""
        lo = self.Q.min()
        return float(self.Q.max() / lo) if lo > 0 else float("inf")

    @property
    def slope(self) -> float:
        """Least-squares slope of ``log Q`` against ``log h``."""
        if np.any(self.Q <= 0):
            return float("nan")
        return float(np.polyfit(np.log(self.h), np.log(self.Q), 1)[0])

    def bounded(self, factor: float = 10.0) -> bool:
        return self.spread <= factor

    def to_dict(self) -> dict:
        return {"h": self.h.tolist(), "Q": self.Q.tolist(), "theta": self.theta, "mu": self.mu,
                "spread": self.spread, "slope": self.slope}


def nikolskii_quotient(
    u: Field,
    mu: float = 1.5,
    theta: float = 0.7,
    h_steps=(1, 2, 4, 8),
    region=(0.25, 0.75, 0.25, 0.75),
    operator=None,
) -> NikolskiiSeries:
    """``Q(h) = sum_s sum_x rho^2 |tau_{s,h} E_h u|^2 (1 + |E_h u|)^-mu h_grid^2 / h^(2 theta)``."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    grid = u.grid
    steps = [int(k) for k in h_steps]
    if any(k < 1 or k >= grid.N for k in steps):
        raise ValueError(f"h_steps must lie in [1, {grid.N - 1}]")
    eu = _strain(u, operator)
    rho2 = smoothstep_cutoff(grid, region) ** 2
    weight = (1.0 + np.linalg.norm(eu.values, axis=-1)) ** (-mu)
    Q = []
    for k in steps:
        total = 0.0
        for s in (0, 1):
            d = finite_difference(eu, s, k, "tau_plus")
            sq = np.sum(d.values**2, axis=-1)
            total += float(np.sum((rho2 * sq * weight)[d.support]))
        h = k * grid.h
        Q.append(total * grid.h**2 / h ** (2 * theta))
    return NikolskiiSeries(np.array(steps) * grid.h, np.array(Q), theta, mu)


@dataclass
class ExcessMap:
    centers: np.ndarray  # (m, 2)
    radii: np.ndarray
    excess: np.ndarray  # (m, len(radii))
    mean_strain: np.ndarray  # (m, len(radii), dim_W)
    hessian_min: np.ndarray  # (m,) at the smallest radius
    regular: np.ndarray  # (m,) bool
    notes: list = field(default_factory=list)

    @property
    def regular_fraction(self) -> float:
        return float(self.regular.mean()) if self.regular.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "radii": self.radii.tolist(),
            "excess": self.excess.tolist(),
            "hessian_min": self.hessian_min.tolist(),
            "regular": self.regular.tolist(),
            "regular_fraction": self.regular_fraction,
            "notes": self.notes,
        }


def _center_lattice(grid, rmax, stride):
    X1, X2 = grid.coords
    pts = []
    for i in range(0, grid.N, stride):
        for j in range(0, grid.N, stride):
            z = (X1[i, j], X2[i, j])
            if _inside(grid, z, rmax):
                pts.append(z)
    return np.array(pts).reshape(-1, 2)


def excess_scan(
    u: Field,
    f: Integrand,
    radii=(0.1, 0.05),
    centers=None,
    threshold: float = 1e-2,
    hessian_bound: float = 1e-3,
    stride: Optional[int] = None,
    operator=None,
) -> ExcessMap:
    """Excess ``avg_B |E_h u - z|`` with ``z = avg_B E_h u`` per center and radius.

    A center is predicted regular when the excess at the smallest radius is
    below ``threshold`` and the smallest Hessian eigenvalue of ``f`` at the
    corresponding mean exceeds ``hessian_bound``.  Grid fields have no
    singular part, so the renormalised singular mass is zero.
    """
    grid = u.grid
    eu = _strain(u, operator)
    if f.dim != eu.dim:
        raise ValueError(f"integrand dim {f.dim} does not match the strain dimension {eu.dim}")
    radii = np.sort(np.atleast_1d(np.asarray(radii, dtype=float)))[::-1]
    if centers is None:
        stride = max(1, (grid.N - 1) // 16) if stride is None else stride
        centers = _center_lattice(grid, radii[0], stride)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    m, nr = len(centers), len(radii)
    excess = np.zeros((m, nr))
    means = np.zeros((m, nr, eu.dim))
    for a, z in enumerate(centers):
        for b, R in enumerate(radii):
            B = ball_mask(grid, z, R) & eu.support
            if not B.any():
                raise ValueError(f"ball of radius {R} holds no nodes")
            vals = eu.values[B]
            zm = vals.mean(axis=0)
            means[a, b] = zm
            excess[a, b] = float(np.mean(np.linalg.norm(vals - zm, axis=-1)))
    smallest = means[:, -1]
    hmin = np.linalg.eigvalsh(f.hessian(smallest))[:, 0] if m else np.zeros(0)
    regular = (excess[:, -1] < threshold) & (hmin > hessian_bound)
    return ExcessMap(centers, radii, excess, means, hmin, regular,
                     notes=["discrete fields carry no singular part"])
