"""First-order constant-coefficient differential operators ``A[D] = sum_j A_j d_j``.

An operator is stored as a stack of ``n`` coefficient matrices of shape
``(dim_W, dim_V)``.  Matrix-valued targets (``R^{n x n}``, ``Sym(n)``, trace-free
``Sym(n)``) are represented in orthonormal coordinates so that the Euclidean
norm of a coordinate vector equals the Frobenius norm of the matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

__all__ = [
    "FirstOrderOperator",
    "EllipticityReport",
    "KKReduction",
    "sym_basis",
    "tracefree_basis",
    "full_basis",
    "to_matrix",
    "to_coords",
    "make_builtin",
    "get_operator",
    "symbol",
    "adjoint_symbol",
    "sigma_min",
    "sphere_samples",
    "ellipticity_margin",
    "kk_reduction",
    "apply",
]

ELLIPTICITY_TOL = 1e-9


# ---------------------------------------------------------------------------
# orthonormal bases of matrix spaces


def full_basis(n: int) -> np.ndarray:
    """Unit matrices ``E_ab`` in row-major order, shape ``(n*n, n, n)``."""
    return np.eye(n * n).reshape(n * n, n, n)


def sym_basis(n: int) -> np.ndarray:
    """Orthonormal basis of ``Sym(n)``: diagonal units, then ``(E_ij + E_ji)/sqrt 2``."""
    mats = []
    for i in range(n):
        e = np.zeros((n, n))
        e[i, i] = 1.0
        mats.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            mats.append(e)
    return np.array(mats)


def tracefree_basis(n: int) -> np.ndarray:
    """Orthonormal basis of trace-free ``Sym(n)`` (Helmert vectors on the diagonal)."""
    if n < 2:
        raise ValueError("trace-free symmetric matrices need n >= 2")
    mats = []
    for k in range(1, n):
        d = np.zeros(n)
        d[:k] = 1.0
        d[k] = -k
        mats.append(np.diag(d / np.sqrt(k * (k + 1))))
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            mats.append(e)
    return np.array(mats)


def to_matrix(coords, basis: np.ndarray) -> np.ndarray:
    """Coordinates ``(..., m)`` to matrices ``(..., n, n)``."""
    return np.tensordot(np.asarray(coords, dtype=float), basis, axes=([-1], [0]))


def to_coords(mats, basis: np.ndarray) -> np.ndarray:
    """Matrices ``(..., n, n)`` to coordinates ``(..., m)`` by Frobenius projection."""
    return np.tensordot(np.asarray(mats, dtype=float), basis, axes=([-2, -1], [1, 2]))


# ---------------------------------------------------------------------------
# operator type


@dataclass(frozen=True)
class FirstOrderOperator:
    """Constant-coefficient operator ``sum_j A_j d_j`` from ``R^dim_V`` to ``R^dim_W``.

    Parameters
    ----------
    coeffs : array of shape (n, dim_W, dim_V)
        The coefficient maps ``A_1, ..., A_n``.
    name : str
        Free-form label.
    basis : array of shape (dim_W, n, n), optional
        Orthonormal matrix basis of the target when it is a matrix space.
    """

    coeffs: np.ndarray
    name: str = "custom"
    basis: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 3 or min(c.shape) < 1:
            raise ValueError(f"coeffs must have shape (n, dim_W, dim_V), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coeffs must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.basis is not None:
            b = np.array(self.basis, dtype=float)
            if b.shape[0] != c.shape[1]:
                raise ValueError("basis length must equal dim_W")
            b.setflags(write=False)
            object.__setattr__(self, "basis", b)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim_W(self) -> int:
        return self.coeffs.shape[1]

    @property
    def dim_V(self) -> int:
        return self.coeffs.shape[2]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "dim_V": self.dim_V,
            "dim_W": self.dim_W,
            "coeffs": self.coeffs.tolist(),
            "name": self.name,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "FirstOrderOperator":
        coeffs = np.asarray(d["coeffs"], dtype=float)
        n, dim_V, dim_W = int(d["n"]), int(d["dim_V"]), int(d["dim_W"])
        if coeffs.shape != (n, dim_W, dim_V):
            raise ValueError(
                f"coeffs shape {coeffs.shape} does not match (n, dim_W, dim_V) = {(n, dim_W, dim_V)}"
            )
        return cls(coeffs, name=d.get("name", "custom"))

    @classmethod
    def from_json(cls, text: str) -> "FirstOrderOperator":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EllipticityReport:
    elliptic: bool
    min_singular_value: float
    witness_xi: np.ndarray
    samples_used: int

    def to_dict(self) -> dict:
        return {
            "elliptic": self.elliptic,
            "min_singular_value": self.min_singular_value,
            "witness_xi": self.witness_xi.tolist(),
            "samples_used": self.samples_used,
        }


@dataclass(frozen=True)
class KKReduction:
    exists: bool
    C: Optional[np.ndarray]
    residual: float

    def to_dict(self) -> dict:
        return {
            "exists": self.exists,
            "C": None if self.C is None else self.C.tolist(),
            "residual": self.residual,
        }


# ---------------------------------------------------------------------------
# built-ins

_ALIASES = {
    "grad": "gradient",
    "gradient": "gradient",
    "D": "gradient",
    "div": "divergence",
    "divergence": "divergence",
    "eps": "symmetric_gradient",
    "symmetric_gradient": "symmetric_gradient",
    "eps_dev": "tracefree_symmetric_gradient",
    "tracefree_symmetric_gradient": "tracefree_symmetric_gradient",
}
_SHORT = {
    "gradient": "grad",
    "divergence": "div",
    "symmetric_gradient": "eps",
    "tracefree_symmetric_gradient": "eps_dev",
}


def _matrix_operator(n, action, basis, name):
    # coeffs[j][k, c] = <basis_k, action(e_c, e_j)>
    eye = np.eye(n)
    coeffs = np.empty((n, basis.shape[0], n))
    for j in range(n):
        for c in range(n):
            coeffs[j, :, c] = to_coords(action(eye[c], eye[j]), basis)
    return FirstOrderOperator(coeffs, name=name, basis=basis)


def make_builtin(kind: str, n: int) -> FirstOrderOperator:
    """Build one of the standard operators acting on ``v: R^n -> R^n``.

    ``kind`` is one of ``gradient``, ``divergence``, ``symmetric_gradient``,
    ``tracefree_symmetric_gradient`` or their short names ``grad``, ``div``,
    ``eps``, ``eps_dev``.  The gradient uses the convention ``(Dv)_ij = d_j v_i``,
    so its symbol is ``v (x) xi``.
    """
    if kind not in _ALIASES:
        raise ValueError(f"unsupported operator kind {kind!r}")
    kind = _ALIASES[kind]
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    name = _SHORT[kind]
    if kind == "gradient":
        return _matrix_operator(n, np.outer, full_basis(n), name)
    if kind == "divergence":
        return FirstOrderOperator(np.eye(n)[:, None, :], name=name)
    if kind == "symmetric_gradient":
        return _matrix_operator(
            n, lambda v, xi: 0.5 * (np.outer(v, xi) + np.outer(xi, v)), sym_basis(n), name
        )
    if n < 2:
        raise ValueError("tracefree_symmetric_gradient requires n >= 2")

    def dev(v, xi):
        s = 0.5 * (np.outer(v, xi) + np.outer(xi, v))
        return s - np.trace(s) / n * np.eye(n)

    return _matrix_operator(n, dev, tracefree_basis(n), name)


def get_operator(desc, n: int = 2) -> FirstOrderOperator:
    """Resolve a built-in name, a JSON string, a dict, or pass an operator through."""
    if isinstance(desc, FirstOrderOperator):
        return desc
    if isinstance(desc, dict):
        return FirstOrderOperator.from_dict(desc)
    if isinstance(desc, str):
        s = desc.strip()
        if s.startswith("{"):
            return FirstOrderOperator.from_json(s)
        return make_builtin(s, n)
    raise TypeError(f"cannot interpret {desc!r} as an operator")


# ---------------------------------------------------------------------------
# symbol calculus


def symbol(op: FirstOrderOperator, xi) -> np.ndarray:
    """``A[xi] = sum_j xi_j A_j``; ``xi`` may carry leading batch axes."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != op.n:
        raise ValueError(f"xi has length {xi.shape[-1]}, operator dimension is {op.n}")
    return np.tensordot(xi, op.coeffs, axes=([-1], [0]))


def adjoint_symbol(op: FirstOrderOperator, xi) -> np.ndarray:
    return np.swapaxes(symbol(op, xi), -1, -2)


def sigma_min(op: FirstOrderOperator, xi) -> np.ndarray:
    """Smallest singular value of ``A[xi]`` as a map on ``V`` (0 if ``dim_W < dim_V``)."""
    A = symbol(op, xi)
    if op.dim_W < op.dim_V:
        return np.zeros(A.shape[:-2])
    return np.linalg.svd(A, compute_uv=False)[..., op.dim_V - 1]


def sphere_samples(n: int, m: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = np.pi * np.arange(m) / m
        return np.column_stack([np.cos(t), np.sin(t)])
    if n == 3:
        # Fibonacci lattice
        k = np.arange(m) + 0.5
        z = 1.0 - 2.0 * k / m
        r = np.sqrt(1.0 - z * z)
        phi = np.pi * (1.0 + np.sqrt(5.0)) * k
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    g = np.random.default_rng(0).standard_normal((m, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def ellipticity_margin(
    op: FirstOrderOperator,
    coarse_samples: Optional[int] = None,
    refine_iters: int = 50,
    tol: float = ELLIPTICITY_TOL,
) -> EllipticityReport:
    """Minimise ``sigma_min(A[xi])`` over the unit sphere.

    Coarse sampling of the sphere (half circle for ``n = 2``, Fibonacci lattice
    for ``n = 3``, seeded Gaussian directions otherwise) followed by local
    descent from the best few samples.
    """
    n = op.n
    if coarse_samples is None:
        coarse_samples = max(64, 16 * n)
    if coarse_samples < 2 * n:
        raise ValueError("coarse_samples must be at least 2n")
    xis = sphere_samples(n, coarse_samples)
    vals = sigma_min(op, xis)
    used = len(xis)
    order = np.argsort(vals, kind="stable")
    best_val, best_xi = float(vals[order[0]]), xis[order[0]]

    def obj(x):
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return np.inf
        return float(sigma_min(op, x / nx))

    if n > 1 and refine_iters > 0 and best_val > 0.0:
        for idx in order[: min(3, len(order))]:
            res = minimize(obj, xis[idx], method="L-BFGS-B", options={"maxiter": refine_iters})
            used += int(res.nfev)
            if np.isfinite(res.fun) and res.fun < best_val:
                best_val = float(res.fun)
                best_xi = res.x / np.linalg.norm(res.x)
    best_xi = best_xi / np.linalg.norm(best_xi)
    best_val = max(best_val, 0.0)
    return EllipticityReport(best_val > tol, best_val, best_xi, used)


def kk_reduction(
    op1: FirstOrderOperator, op2: FirstOrderOperator, tol: float = 1e-10
) -> KKReduction:
    """Least-squares search for a constant ``C`` with ``A2_j = C A1_j`` for all ``j``.

    The residual is ``||[A2_j - C A1_j]_j||_F / sum_j ||A2_j||_F``.  A small
    residual means ``||op2 phi||_1 <= |C| ||op1 phi||_1`` holds pointwise; a
    residual bounded away from zero rules out any L^1 estimate between the two.
    """
    if op1.n != op2.n or op1.dim_V != op2.dim_V:
        raise ValueError("operators must share n and dim_V")
    B1 = np.hstack(list(op1.coeffs))  # (W1, n*V)
    B2 = np.hstack(list(op2.coeffs))  # (W2, n*V)
    Ct, *_ = np.linalg.lstsq(B1.T, B2.T, rcond=None)
    C = Ct.T
    scale = float(sum(np.linalg.norm(a) for a in op2.coeffs))
    resid = float(np.linalg.norm(B2 - C @ B1))
    residual = resid / scale if scale > 0 else 0.0
    exists = residual <= tol
    return KKReduction(exists, C, residual)


def apply(op: FirstOrderOperator, field, grid=None, scheme: str = "central"):
    """Discrete ``A[D]u`` on a grid field: ``sum_j A_j d_j^h u`` nodewise.

    ``scheme`` is ``"central"`` (one-sided at the edge nodes) or ``"forward"``
    (backward on the last node).
    """
    from .grid import Field, partial

    grid = field.grid if grid is None else grid
    if op.n != 2:
        raise ValueError("grid application is two-dimensional")
    if field.dim != op.dim_V:
        raise ValueError(f"field has {field.dim} components, operator expects {op.dim_V}")
    out = np.zeros(field.values.shape[:2] + (op.dim_W,))
    for j in range(2):
        d = partial(field.values, grid.h, axis=j, scheme=scheme)
        out += d @ op.coeffs[j].T
    return Field(grid, out, field.support)
