"""Boundary-trace blow-up of a holomorphic field with a boundary pole.

``f(z) = 1/(z - 1)`` is integrable on the unit disk while its ring integrals

    I(r) = r * int_0^{2 pi} dtheta / |r e^{i theta} - 1|

grow like ``2 log(1/(1 - r))``.  Since ``u_1 + i u_2`` holomorphic means
``eps^D u = 0``, the field ``u_f = (Re f, Im f)`` has vanishing trace-free
symmetric gradient but no integrable boundary trace.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid
from .operators import apply as apply_operator, make_builtin

__all__ = [
    "TraceReport",
    "ring_integral",
    "disk_integral",
    "pole_field",
    "tracefree_residual",
    "trace_blowup",
]

_ORDER = 16  # Gauss-Legendre points per panel


def _graded_nodes(length: float, smallest: float, n_points: int):
    """Nodes/weights on ``[0, length]`` with geometric panels clustered at 0."""
    panels = max(2, n_points // _ORDER)
    smallest = min(smallest, 0.5 * length)
    q = (smallest / length) ** (1.0 / (panels - 1))
    edges = np.concatenate([[0.0], length * q ** np.arange(panels - 1, -1, -1)])
    x, w = np.polynomial.legendre.leggauss(_ORDER)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


def ring_integral(r, n_theta: int = 256) -> np.ndarray:
    """``I(r)`` by graded composite Gauss-Legendre quadrature in ``theta``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any((r < 0) | (r >= 1)):
        raise ValueError("radii must lie in [0, 1)")
    return _ring_by_gap(1.0 - r, n_theta)


def _ring_by_gap(gap, n_theta):
    # I(1 - gap) without forming r - 1
    out = np.empty_like(gap)
    for k, g in enumerate(gap):
        r = 1.0 - g
        th, w = _graded_nodes(np.pi, 1e-2 * g, n_theta)
        dist = np.sqrt(g * g + 4.0 * r * np.sin(0.5 * th) ** 2)
        out[k] = 2.0 * r * np.dot(w, 1.0 / dist)
    return out


def disk_integral(n_points: int = 256) -> float:
    """``int_{disk} |f| dA = int_0^1 I(r) dr``, graded toward ``r = 1``."""
    s, w = _graded_nodes(1.0, 1e-14, n_points)
    return float(np.dot(w, _ring_by_gap(s, n_points)))


def pole_field(grid: Grid, cutoff: float = 0.98) -> Field:
    """``(Re f, Im f)`` on nodes with ``|x| < cutoff``; zero elsewhere."""
    X1, X2 = grid.coords
    inside = np.hypot(X1, X2) < cutoff
    z = np.where(inside, X1 + 1j * X2, 0.0)
    fz = np.where(inside, 1.0 / (z - 1.0), 0.0)
    return Field(grid, np.stack([fz.real, fz.imag], axis=-1), inside & grid.mask)


def tracefree_residual(N: int, radius: float = 0.9, coarse: int = None) -> float:
    """Discrete ``sup_{|x| <= radius} |eps^D_h u_f|`` on the disk grid of size ``N``.

    With ``coarse`` the sup runs over the nodes shared with the ``coarse``-point
    grid, so that refinements compare the same points.
    """
    grid = Grid(N, "unit_disk", origin=(-1.0, -1.0), length=2.0)
    u = pole_field(grid)
    e = apply_operator(make_builtin("eps_dev", 2), u)
    X1, X2 = grid.coords
    sub = np.hypot(X1, X2) <= radius
    if coarse is not None:
        stride, rem = divmod(N - 1, coarse - 1)
        if rem:
            raise ValueError(f"N={N} does not refine the {coarse}-point grid")
        lattice = np.zeros_like(sub)
        lattice[::stride, ::stride] = True
        sub &= lattice
    return float(np.linalg.norm(e.values[sub], axis=-1).max())


@dataclass
class TraceReport:
    radii: list
    ring: list
    ring_refined: list
    area: float
    area_refined: float
    slope: float
    resolutions: list
    residuals: list
    orders: list
    ring_converged: bool
    area_converged: bool

    @property
    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.ring) > 0))

    def to_dict(self) -> dict:
        return {
            "radii": self.radii,
            "ring_integrals": self.ring,
            "ring_integrals_refined": self.ring_refined,
            "ring_strictly_increasing": self.strictly_increasing,
            "ring_converged": self.ring_converged,
            "area_integral": self.area,
            "area_integral_refined": self.area_refined,
            "area_converged": self.area_converged,
            "slope": self.slope,
            "resolutions": self.resolutions,
            "tracefree_residuals": self.residuals,
            "observed_orders": self.orders,
        }


def trace_blowup(
    radii=(0.5, 0.9, 0.99, 0.999),
    n_theta: int = 256,
    fit_last: int = 3,
    resolutions=(65, 129),
    subdisk: float = 0.9,
    tol: float = 1e-6,
) -> TraceReport:
    """Ring and area integrals of ``|1/(z-1)|`` plus the discrete kernel check.

    The slope is fitted to ``I(r)`` against ``log(1/(1-r))`` over the last
    ``fit_last`` radii.  Convergence flags compare ``n_theta`` with ``2 n_theta``
    at relative tolerance ``tol``.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    if radii[0] <= 0 or radii[-1] >= 1:
        raise ValueError("radii must lie in (0, 1)")
    if n_theta < 256:
        raise ValueError("n_theta must be at least 256")
    if not 2 <= fit_last <= len(radii):
        raise ValueError("fit_last must be between 2 and the number of radii")
    I1 = ring_integral(radii, n_theta)
    I2 = ring_integral(radii, 2 * n_theta)
    A1 = disk_integral(n_theta)
    A2 = disk_integral(2 * n_theta)
    L = np.log(1.0 / (1.0 - radii[-fit_last:]))
    slope = float(np.polyfit(L, I2[-fit_last:], 1)[0])
    res = [tracefree_residual(N, subdisk, coarse=resolutions[0]) for N in resolutions]
    orders = [float(np.log2(a / b)) if b > 0 else float("inf") for a, b in zip(res, res[1:])]
    return TraceReport(
        radii=radii.tolist(),
        ring=I1.tolist(),
        ring_refined=I2.tolist(),
        area=A1,
        area_refined=A2,
        slope=slope,
        resolutions=list(resolutions),
        residuals=res,
        orders=orders,
        ring_converged=bool(np.all(np.abs(I2 - I1) <= tol * np.abs(I2))),
        area_converged=bool(abs(A2 - A1) <= tol * abs(A2)),
    )
