"""Uniform 2D grids, nodal fields and the discrete analysis toolbox.

Arrays are indexed ``values[i, j, c]`` with ``x1 = origin[0] + i*h`` and
``x2 = origin[1] + j*h``.  Fields carry a boolean ``support`` mask marking the
nodes on which their values are meaningful; difference and mollification
operators shrink it.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage, sparse

__all__ = [
    "Grid",
    "Field",
    "VectorField",
    "TensorField",
    "RigidMotion",
    "partial",
    "derivative_matrix",
    "finite_difference",
    "lp_norm",
    "bmo_seminorm",
    "rigid_project",
    "mollify",
    "ball_mask",
    "save_csv",
    "load_csv",
    "save_binary",
    "load_binary",
]

DOMAINS = ("unit_square", "unit_disk")
_DOMAIN_TAG = {"unit_square": 0, "unit_disk": 1, "torus": 2}
_TAG_DOMAIN = {v: k for k, v in _DOMAIN_TAG.items()}


@dataclass(frozen=True)
class Grid:
    """``N x N`` lattice on the square ``origin + [0, length]^2``.

    ``domain="unit_disk"`` masks the nodes of the inscribed disk.  Interior
    nodes have all four neighbours in the mask; the rest of the mask is the
    boundary layer on which Dirichlet data are pinned.
    """

    N: int
    domain: str = "unit_square"
    origin: tuple = (0.0, 0.0)
    length: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValueError(f"N must be an integer >= 3, got {self.N}")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if not self.length > 0:
            raise ValueError("length must be positive")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "length", float(self.length))

    @property
    def h(self) -> float:
        return self.length / (self.N - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    @property
    def coords(self) -> tuple:
        x1 = self.origin[0] + self.x
        x2 = self.origin[1] + self.x
        return np.meshgrid(x1, x2, indexing="ij")

    @property
    def center(self) -> np.ndarray:
        return np.array(self.origin) + 0.5 * self.length

    @property
    def mask(self) -> np.ndarray:
        if self.domain == "unit_square":
            return np.ones((self.N, self.N), dtype=bool)
        X1, X2 = self.coords
        c = self.center
        r = np.hypot(X1 - c[0], X2 - c[1])
        return r <= 0.5 * self.length + 1e-12 * self.length

    @property
    def interior(self) -> np.ndarray:
        m = self.mask
        inner = np.zeros_like(m)
        inner[1:-1, 1:-1] = m[1:-1, 1:-1] & m[2:, 1:-1] & m[:-2, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2]
        return inner

    @property
    def boundary(self) -> np.ndarray:
        return self.mask & ~self.interior

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights: tensor trapezoid on the square, ``h^2`` on disk nodes."""
        if self.domain == "unit_square":
            w = np.full(self.N, self.h)
            w[0] = w[-1] = 0.5 * self.h
            return np.outer(w, w)
        return np.where(self.mask, self.h**2, 0.0)

    def field(self, fn: Callable, support=None) -> "Field":
        """Evaluate ``fn(x1, x2)`` (returning a component sequence) on all nodes."""
        X1, X2 = self.coords
        vals = fn(X1, X2)
        if isinstance(vals, np.ndarray) and vals.shape == X1.shape:
            vals = [vals]
        arr = np.stack([np.broadcast_to(np.asarray(v, dtype=float), X1.shape) for v in vals], axis=-1)
        return Field(self, arr, support)

    def zeros(self, dim: int) -> "Field":
        return Field(self, np.zeros((self.N, self.N, dim)))


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal ``dim``-component data on a grid (vector or tensor coordinates)."""

    grid: Grid
    values: np.ndarray
    support: Optional[np.ndarray] = dc_field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[..., None]
        N = self.grid.N
        if v.shape[:2] != (N, N):
            raise ValueError(f"values must have shape ({N}, {N}, dim), got {v.shape}")
        sup = self.grid.mask if self.support is None else np.asarray(self.support, dtype=bool)
        if sup.shape != (N, N):
            raise ValueError("support mask has the wrong shape")
        if not np.all(np.isfinite(v[sup])):
            raise ValueError("field values must be finite on the support")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "support", sup)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def with_values(self, values, support=None) -> "Field":
        return Field(self.grid, values, self.support if support is None else support)

    def __add__(self, other):
        if isinstance(other, Field):
            return Field(self.grid, self.values + other.values, self.support & other.support)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, Field):
            return Field(self.grid, self.values - other.values, self.support & other.support)
        return self.with_values(self.values - other)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


VectorField = Field
TensorField = Field


@dataclass(frozen=True)
class RigidMotion:
    """``x -> skew * R x + translation`` with ``R`` the rotation by ``pi/2``."""

    skew: float
    translation: np.ndarray

    def __call__(self, x1, x2):
        b = np.asarray(self.translation, dtype=float)
        x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
        return (-self.skew * x2 + b[0], self.skew * x1 + b[1])

    def field(self, grid: Grid) -> Field:
        return grid.field(self)


# ---------------------------------------------------------------------------
# differences


def partial(values: np.ndarray, h: float, axis: int, scheme: str = "central") -> np.ndarray:
    """Nodal derivative along ``axis``; one-sided differences on the edge nodes."""
    if scheme == "central":
        return np.gradient(values, h, axis=axis, edge_order=1)
    if scheme == "forward":
        v = np.moveaxis(values, axis, 0)
        d = np.empty_like(v)
        d[:-1] = (v[1:] - v[:-1]) / h
        d[-1] = (v[-1] - v[-2]) / h
        return np.moveaxis(d, 0, axis)
    raise ValueError(f"unknown difference scheme {scheme!r}")


def derivative_matrix(N: int, h: float):
    """Sparse 1D central-difference matrix with one-sided end rows."""
    rows, cols, data = [], [], []
    rows += [0, 0]
    cols += [0, 1]
    data += [-1.0 / h, 1.0 / h]
    for i in range(1, N - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        data += [-0.5 / h, 0.5 / h]
    rows += [N - 1, N - 1]
    cols += [N - 2, N - 1]
    data += [-1.0 / h, 1.0 / h]
    return sparse.csr_matrix((data, (rows, cols)), shape=(N, N))


def _shift(a: np.ndarray, k: int, axis: int, fill=0.0) -> np.ndarray:
    # out[i] = a[i + k] where defined
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if k >= 0:
        src[axis] = slice(k, None)
        dst[axis] = slice(0, a.shape[axis] - k)
    else:
        src[axis] = slice(0, a.shape[axis] + k)
        dst[axis] = slice(-k, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def finite_difference(field: Field, direction: int, h_steps: int = 1, kind: str = "tau_plus") -> Field:
    """Finite difference ``tau^{+-}`` or difference quotient ``Delta^{+-}`` along ``x_{direction+1}``.

    ``tau_plus v(x) = v(x + k h e_s) - v(x)`` with ``k = h_steps``;
    ``delta_*`` divides by ``k h``.  Nodes whose partner falls outside the
    support are dropped from the output support and set to zero.
    """
    N = field.grid.N
    if direction not in (0, 1):
        raise ValueError("direction must be 0 or 1")
    if int(h_steps) != h_steps or h_steps < 1:
        raise ValueError("h_steps must be a positive integer")
    if h_steps >= N:
        raise ValueError(f"h_steps={h_steps} exceeds the grid (N={N})")
    if kind not in ("tau_plus", "tau_minus", "delta_plus", "delta_minus"):
        raise ValueError(f"unknown difference kind {kind!r}")
    k = h_steps if kind.endswith("plus") else -h_steps
    shifted = _shift(field.values, k, direction)
    sup = field.support & _shift(field.support, k, direction, fill=False)
    out = np.where(sup[..., None], shifted - field.values, 0.0)
    if kind.startswith("delta"):
        out = out / (h_steps * field.grid.h)
    return Field(field.grid, out, sup)


# ---------------------------------------------------------------------------
# norms and oscillations


def lp_norm(field: Field, p: float = 2.0, region=None) -> float:
    """``(sum_x |v(x)|^p w(x))^(1/p)`` over ``region``; max over the region for ``p = inf``."""
    region = field.support if region is None else np.asarray(region, dtype=bool) & field.support
    if not region.any():
        raise ValueError("empty region")
    mag = np.linalg.norm(field.values, axis=-1)[region]
    if np.isinf(p):
        return float(mag.max())
    if p < 1:
        raise ValueError("p must be in [1, inf]")
    w = field.grid.weights[region]
    return float(np.sum(mag**p * w) ** (1.0 / p))


def _index_range(lo: float, hi: float, origin: float, h: float, N: int):
    a = max(0, int(math.ceil((lo - origin) / h - 1e-9)))
    b = min(N - 1, int(math.floor((hi - origin) / h + 1e-9)))
    return a, b


def _trap(n: int) -> np.ndarray:
    w = np.ones(n)
    if n > 1:
        w[0] = w[-1] = 0.5
    return w


def bmo_seminorm(field: Field, K=None, max_depth: int = 3) -> float:
    """Largest mean oscillation ``avg_Q |u - (u)_Q|`` over dyadic subrectangles ``Q`` of ``K``.

    ``K = (x1_lo, x1_hi, x2_lo, x2_hi)`` (defaults to the whole grid).  Each
    ``Q`` is a closed block of nodes averaged with local trapezoid weights.
    """
    g = field.grid
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if K is None:
        K = (g.origin[0], g.origin[0] + g.length, g.origin[1], g.origin[1] + g.length)
    i0, i1 = _index_range(K[0], K[1], g.origin[0], g.h, g.N)
    j0, j1 = _index_range(K[2], K[3], g.origin[1], g.h, g.N)
    if i1 - i0 < 1 or j1 - j0 < 1:
        raise ValueError("K must contain at least 2 x 2 nodes")
    best = 0.0
    for depth in range(max_depth + 1):
        m = 2**depth
        bi = [i0 + round(k * (i1 - i0) / m) for k in range(m + 1)]
        bj = [j0 + round(k * (j1 - j0) / m) for k in range(m + 1)]
        for a in range(m):
            if bi[a + 1] == bi[a]:
                continue
            for b in range(m):
                if bj[b + 1] == bj[b]:
                    continue
                sl = (slice(bi[a], bi[a + 1] + 1), slice(bj[b], bj[b + 1] + 1))
                w = np.outer(_trap(bi[a + 1] - bi[a] + 1), _trap(bj[b + 1] - bj[b] + 1))
                w = w * field.support[sl]
                tot = w.sum()
                if tot == 0:
                    continue
                v = field.values[sl]
                mean = np.tensordot(w, v, axes=([0, 1], [0, 1])) / tot
                osc = float(np.sum(w * np.linalg.norm(v - mean, axis=-1)) / tot)
                best = max(best, osc)
    return best


def rigid_project(field: Field, region=None):
    """Least-squares rigid motion fit on ``region``; returns ``(RigidMotion, residual)``."""
    if field.dim != 2:
        raise ValueError("rigid motions are defined for 2-component fields")
    region = field.support if region is None else np.asarray(region, dtype=bool) & field.support
    X1, X2 = field.grid.coords
    x1, x2 = X1[region], X2[region]
    if x1.size < 3:
        raise ValueError("region needs at least 3 nodes")
    c1, c2 = x1.mean(), x2.mean()
    y1, y2 = x1 - c1, x2 - c2
    if np.linalg.matrix_rank(np.column_stack([y1, y2])) < 2:
        raise ValueError("region nodes are collinear")
    u = field.values[region]
    # unknowns (a, b1', b2'): u1 = -a y2 + b1', u2 = a y1 + b2'
    m = x1.size
    A = np.zeros((2 * m, 3))
    A[:m, 0], A[:m, 1] = -y2, 1.0
    A[m:, 0], A[m:, 2] = y1, 1.0
    rhs = np.concatenate([u[:, 0], u[:, 1]])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    a = float(sol[0])
    b = np.array([sol[1] + a * c2, sol[2] - a * c1])
    motion = RigidMotion(a, b)
    fit = np.stack(motion(X1, X2), axis=-1)
    resid = np.where(region[..., None], field.values - fit, 0.0)
    return motion, Field(field.grid, resid, region)


def _bump_kernel(radius: float, h: float) -> np.ndarray:
    m = int(math.floor(radius / h))
    d = np.arange(-m, m + 1) * h
    R2 = (d[:, None] ** 2 + d[None, :] ** 2) / radius**2
    k = np.where(R2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - R2, 1e-300)), 0.0)
    return k / k.sum()


def mollify(field: Field, radius: float) -> Field:
    """Convolve with the normalised smooth bump ``exp(-1/(1-|x|^2/rho^2))``.

    The output support is the set of nodes whose whole stencil lies in the
    input support.
    """
    g = field.grid
    if radius < g.h * (1 - 1e-12):
        raise ValueError("mollification radius must be at least h")
    if radius > 0.5 * g.length:
        raise ValueError("mollification radius exceeds half the domain")
    k = _bump_kernel(radius, g.h)
    vals = np.where(field.support[..., None], field.values, 0.0)
    out = np.stack(
        [ndimage.correlate(vals[..., c], k, mode="constant", cval=0.0) for c in range(field.dim)],
        axis=-1,
    )
    sup = ndimage.binary_erosion(field.support, structure=k > 0, border_value=0)
    return Field(g, np.where(sup[..., None], out, 0.0), sup)


def ball_mask(grid: Grid, center: Sequence[float], radius: float) -> np.ndarray:
    X1, X2 = grid.coords
    return (X1 - center[0]) ** 2 + (X2 - center[1]) ** 2 <= radius**2 * (1 + 1e-12)


# ---------------------------------------------------------------------------
# serialization


def save_csv(field: Field, path) -> None:
    """Write ``x,y,comp0,comp1,...`` rows (row-major over nodes)."""
    X1, X2 = field.grid.coords
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"] + [f"comp{c}" for c in range(field.dim)])
        for i in range(field.grid.N):
            for j in range(field.grid.N):
                w.writerow([repr(float(X1[i, j])), repr(float(X2[i, j]))]
                           + [repr(float(v)) for v in field.values[i, j]])


def load_csv(path, domain: str = "unit_square") -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    N = int(round(math.sqrt(data.shape[0])))
    if N * N != data.shape[0]:
        raise ValueError("CSV does not hold a square grid")
    x = data[:, 0].reshape(N, N)
    y = data[:, 1].reshape(N, N)
    grid = Grid(N, domain, origin=(x[0, 0], y[0, 0]), length=x[-1, 0] - x[0, 0])
    return Field(grid, data[:, 2:].reshape(N, N, -1))


_HEADER = struct.Struct("<4sqqqddd")


def save_binary(field: Field, path, periodic: bool = False) -> None:
    """Little-endian layout: magic, N, dim, domain tag, origin, length, then float64 values."""
    g = field.grid
    tag = _DOMAIN_TAG["torus" if periodic else g.domain]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"SCVF", g.N, field.dim, tag, g.origin[0], g.origin[1], g.length))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_binary(path):
    """Return ``(Field, periodic)``."""
    with open(path, "rb") as fh:
        magic, N, dim, tag, o1, o2, length = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != b"SCVF":
            raise ValueError("not a field file")
        vals = np.frombuffer(fh.read(), dtype="<f8").reshape(N, N, dim)
    domain = _TAG_DOMAIN[tag]
    periodic = domain == "torus"
    grid = Grid(N, "unit_square" if periodic else domain, origin=(o1, o2), length=length)
    return Field(grid, vals.copy()), periodic
