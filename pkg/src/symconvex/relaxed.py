"""Relaxed (lower semicontinuous) energies on BV/BD-type objects.

The relaxed energy of ``v`` with datum ``u0`` splits into three parts::

    ac       = int f(Ev) dx
    singular = int f_inf(dE^s v / d|E^s v|) d|E^s v|
    boundary = int_{dOmega} f_inf(Tr(v - u0) (.) nu) dH^{n-1}

In one dimension ``E v = v'`` and the object is exact: slopes carry the
absolutely continuous part and jumps the singular part.  Grid fields have no
singular part.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .integrands import Integrand, recession
from .operators import apply as apply_operator, make_builtin, symbol

__all__ = [
    "BVPiecewise1D",
    "EnergyBreakdown",
    "sym_tensor",
    "relaxed_energy_1d",
    "relaxed_energy_grid",
]


def sym_tensor(a, b) -> np.ndarray:
    """``a (.) b = (a b^T + b a^T) / 2``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("vectors must have the same length")
    ab = a[..., :, None] * b[..., None, :]
    return 0.5 * (ab + np.swapaxes(ab, -1, -2))


@dataclass(frozen=True)
class BVPiecewise1D:
    """Piecewise-affine function on ``[0, 1]`` with finitely many jumps.

    ``slopes[k]`` is the derivative on ``(breakpoints[k], breakpoints[k+1])``;
    ``jumps`` lists ``(x, height)`` pairs at interior points; ``left_trace`` is
    ``u(0+)``; ``datum`` holds ``(u0(0), u0(1))``.
    """

    breakpoints: tuple
    slopes: tuple
    jumps: tuple = ()
    left_trace: float = 0.0
    datum: tuple = (0.0, 0.0)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or len(bp) < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must run from 0 to 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.slopes) != len(bp) - 1:
            raise ValueError("need one slope per interval")
        jumps = tuple((float(x), float(hgt)) for x, hgt in self.jumps)
        for x, _ in jumps:
            if not 0.0 < x < 1.0:
                raise ValueError("jump locations must be interior")
        object.__setattr__(self, "breakpoints", tuple(bp.tolist()))
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "left_trace", float(self.left_trace))
        object.__setattr__(self, "datum", (float(self.datum[0]), float(self.datum[1])))

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def right_trace(self) -> float:
        return (self.left_trace + float(np.dot(self.slopes, self.lengths))
                + sum(hgt for _, hgt in self.jumps))

    def __call__(self, x):
        """Evaluate (right-continuous at jumps)."""
        x = np.asarray(x, dtype=float)
        bp = np.asarray(self.breakpoints)
        out = np.full(x.shape, self.left_trace)
        for k, s in enumerate(self.slopes):
            out += s * np.clip(x - bp[k], 0.0, bp[k + 1] - bp[k])
        for xj, hgt in self.jumps:
            out += np.where(x >= xj, hgt, 0.0)
        return out

    def to_dict(self) -> dict:
        return {
            "breakpoints": list(self.breakpoints),
            "slopes": list(self.slopes),
            "jumps": [{"x": x, "height": hgt} for x, hgt in self.jumps],
            "left_trace": self.left_trace,
            "datum": list(self.datum),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BVPiecewise1D":
        jumps = [(j["x"], j["height"]) for j in d.get("jumps", [])]
        return cls(d["breakpoints"], d["slopes"], jumps,
                   d.get("left_trace", 0.0), tuple(d.get("datum", (0.0, 0.0))))

    @classmethod
    def from_json(cls, text: str) -> "BVPiecewise1D":
        return cls.from_dict(json.loads(text))


@dataclass
class EnergyBreakdown:
    ac: float
    singular: float
    boundary: float
    notes: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.ac + self.singular + self.boundary

    def to_dict(self) -> dict:
        return {"ac": self.ac, "singular": self.singular, "boundary": self.boundary,
                "total": self.total}


def _scalar(v):
    return np.asarray([v], dtype=float)


def relaxed_energy_1d(f: Integrand, u: BVPiecewise1D) -> EnergyBreakdown:
    if f.dim != 1:
        raise ValueError("the 1D relaxed energy needs a scalar integrand (dim=1)")
    slopes = np.asarray(u.slopes)[:, None]
    ac = float(np.dot(f.value(slopes), u.lengths))
    singular = 0.0
    for _, hgt in u.jumps:
        singular += float(recession(f, _scalar(hgt)))
    left = (u.left_trace - u.datum[0]) * -1.0
    right = (u.right_trace - u.datum[1]) * 1.0
    boundary = float(recession(f, _scalar(left))) + float(recession(f, _scalar(right)))
    return EnergyBreakdown(ac, singular, boundary)


def _square_sides(grid):
    # (index slices, outward normal) for each side of the square
    N = grid.N
    return [
        ((0, slice(None)), np.array([-1.0, 0.0])),
        ((N - 1, slice(None)), np.array([1.0, 0.0])),
        ((slice(None), 0), np.array([0.0, -1.0])),
        ((slice(None), N - 1), np.array([0.0, 1.0])),
    ]


def relaxed_energy_grid(f: Integrand, u, u0, grid=None, operator=None) -> EnergyBreakdown:
    """Relaxed energy of a grid field: quadrature of ``f(A_h u)`` plus the trace penalty.

    The boundary term uses the outward normal of each square side (trapezoid
    weights along the side) or the analytic disk normal at boundary nodes
    (equal share of the circumference).
    """
    grid = u.grid if grid is None else grid
    if u.grid != grid or u0.grid != grid:
        raise ValueError("fields must share the grid")
    if u.dim != 2 or u0.dim != 2:
        raise ValueError("grid relaxed energy is defined for 2-component fields")
    op = make_builtin("eps", 2) if operator is None else operator
    if f.dim != op.dim_W:
        raise ValueError(f"integrand dim {f.dim} does not match operator target {op.dim_W}")
    eu = apply_operator(op, u, grid).values
    w = grid.weights
    mask = grid.mask
    ac = float(np.sum(f.value(eu)[mask] * w[mask]))

    # trace term f_inf(A[nu] (u - u0)); for eps, A[nu] d = d (.) nu
    diff = u.values - u0.values
    boundary = 0.0
    if grid.domain == "unit_square":
        tw = np.full(grid.N, grid.h)
        tw[0] = tw[-1] = 0.5 * grid.h
        for idx, nu in _square_sides(grid):
            Z = diff[idx] @ symbol(op, nu).T
            boundary += float(np.dot(recession(f, Z), tw))
    else:
        X1, X2 = grid.coords
        c = grid.center
        bnd = grid.boundary
        nu = np.stack([X1[bnd] - c[0], X2[bnd] - c[1]], axis=-1)
        nu /= np.linalg.norm(nu, axis=-1, keepdims=True)
        Z = np.einsum("kwv,kv->kw", symbol(op, nu), diff[bnd])
        ds = np.pi * grid.length / bnd.sum()
        boundary = float(np.sum(recession(f, Z)) * ds)
    return EnergyBreakdown(ac, 0.0, boundary, notes=["grid fields carry no singular part"])
