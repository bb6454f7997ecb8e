"""Spectral calculus on the periodic unit square ``[0, 1)^2``.

Periodic zero-mean fields stand in for compactly supported test fields.  On
the torus the recovery operator ``u = G[A[D]u]`` is exact on resolved modes::

    u_hat(k) = A[2 pi i k]^+ g_hat(k) = (2 pi i)^-1 (A*[k] A[k])^-1 A*[k] g_hat(k)

Derivative factors vanish on the Nyquist row/column so that spectral
differentiation maps real fields to real fields and is skew-adjoint.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .operators import (
    FirstOrderOperator,
    ellipticity_margin,
    get_operator,
    kk_reduction,
    make_builtin,
    symbol,
)

__all__ = [
    "TorusField",
    "RatioTrace",
    "NotEllipticError",
    "DegenerateFieldError",
    "wavenumbers",
    "spectral_apply",
    "spectral_adjoint",
    "spectral_gradient",
    "band_limit",
    "random_band_limited",
    "upsample",
    "recover",
    "korn_ratio",
    "p2_bound",
    "ornstein_search",
    "SpectralRecovery",
]


class NotEllipticError(ValueError):
    pass


class DegenerateFieldError(ArithmeticError):
    """The field lies (numerically) in the nullspace of the operator."""


@dataclass(frozen=True, eq=False)
class TorusField:
    """``N x N`` periodic nodal values ``values[i, j, c]`` at ``(i/N, j/N)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise ValueError(f"torus field values must have shape (N, N, dim), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("torus field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def zero_mean(self) -> bool:
        return bool(np.all(np.abs(self.values.mean(axis=(0, 1))) <= 1e-12 * max(1.0, np.abs(self.values).max())))

    @classmethod
    def from_function(cls, N: int, fn) -> "TorusField":
        x = np.arange(N) / N
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        comps = fn(X1, X2)
        return cls(np.stack([np.broadcast_to(np.asarray(c, float), X1.shape) for c in comps], axis=-1))

    def centered(self) -> "TorusField":
        return TorusField(self.values - self.values.mean(axis=(0, 1)))


def wavenumbers(N: int) -> np.ndarray:
    """Integer wavenumbers ``(N, N, 2)`` with the Nyquist entries set to zero."""
    k = np.fft.fftfreq(N, 1.0 / N)
    if N % 2 == 0:
        k[N // 2] = 0.0
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    return np.stack([K1, K2], axis=-1)


def _fft(v):
    return np.fft.fft2(v, axes=(0, 1))


def _ifft(vh):
    return np.fft.ifft2(vh, axes=(0, 1)).real


def _values(u):
    return u.values if isinstance(u, TorusField) else np.asarray(u, dtype=float)


def spectral_apply(op: FirstOrderOperator, u) -> TorusField:
    """``A[D]u`` computed exactly on the resolved modes."""
    v = _values(u)
    if v.shape[-1] != op.dim_V:
        raise ValueError(f"field has {v.shape[-1]} components, operator expects {op.dim_V}")
    k = wavenumbers(v.shape[0])
    S = symbol(op, k)  # (N, N, W, V)
    gh = 2j * np.pi * np.einsum("ijwv,ijv->ijw", S, _fft(v))
    return TorusField(_ifft(gh))


def spectral_adjoint(op: FirstOrderOperator, g) -> np.ndarray:
    """Euclidean adjoint ``A[D]^T g = -sum_j d_j (A_j^T g)``."""
    v = _values(g)
    k = wavenumbers(v.shape[0])
    S = symbol(op, k)
    uh = -2j * np.pi * np.einsum("ijwv,ijw->ijv", S, _fft(v))
    return _ifft(uh)


def spectral_gradient(u) -> TorusField:
    v = _values(u)
    return spectral_apply(make_builtin("grad", 2), v)


def band_limit(v: np.ndarray, band: int) -> np.ndarray:
    """Keep modes with ``max(|k1|, |k2|) <= band``, drop the mean."""
    N = v.shape[0]
    k = np.fft.fftfreq(N, 1.0 / N)
    keep = (np.abs(k)[:, None] <= band) & (np.abs(k)[None, :] <= band)
    keep[0, 0] = False
    return _ifft(_fft(v) * keep[..., None])


def random_band_limited(N: int, dim: int, band: int, rng, decay: float = 0.0) -> np.ndarray:
    """Random real zero-mean field with modes ``<= band`` and spectrum ``|k|^-decay``."""
    v = rng.standard_normal((N, N, dim))
    if decay:
        k = wavenumbers(N)
        amp = np.maximum(np.linalg.norm(k, axis=-1), 1.0) ** -decay
        v = _ifft(_fft(v) * amp[..., None])
    return band_limit(v, band)


def upsample(u, N2: int) -> TorusField:
    """Trigonometric interpolation onto an ``N2 x N2`` grid (zero padding)."""
    v = _values(u)
    N = v.shape[0]
    if N2 < N:
        raise ValueError("upsample target must be at least as fine")
    vh = np.fft.fftshift(_fft(v), axes=(0, 1))
    if N % 2 == 0:
        # drop the Nyquist row/column so the result stays real
        vh = vh.copy()
        vh[0, :] = 0.0
        vh[:, 0] = 0.0
    pad = (N2 - N) // 2
    out = np.zeros((N2, N2, v.shape[-1]), dtype=complex)
    out[pad:pad + N, pad:pad + N] = vh
    out = np.fft.ifftshift(out, axes=(0, 1))
    return TorusField(_ifft(out) * (N2 / N) ** 2)


def _check_elliptic(op):
    rep = ellipticity_margin(op)
    if not rep.elliptic:
        raise NotEllipticError(f"operator {op.name!r} is not elliptic (sigma_min={rep.min_singular_value:g})")
    return rep


def _pinv_symbols(op: FirstOrderOperator, N: int) -> np.ndarray:
    k = wavenumbers(N)
    return np.linalg.pinv(symbol(op, k), rcond=1e-12)  # (N, N, V, W); zero at k = 0


def recover(op: FirstOrderOperator, g, _pinv=None) -> TorusField:
    """Zero-mean least-squares preimage ``u`` of ``g = A[D]u``."""
    op = get_operator(op)
    if _pinv is None:
        _check_elliptic(op)
    g = g if isinstance(g, TorusField) else TorusField(g)
    if g.dim != op.dim_W:
        raise ValueError(f"g has {g.dim} components, operator target has {op.dim_W}")
    if not g.zero_mean:
        raise ValueError("g must have zero mean")
    P = _pinv_symbols(op, g.N) if _pinv is None else _pinv
    uh = np.einsum("ijvw,ijw->ijv", P, _fft(g.values)) / (2j * np.pi)
    return TorusField(_ifft(uh))


def _pnorm(mag: np.ndarray, p: float) -> float:
    if np.isinf(p):
        return float(mag.max())
    return float(np.mean(mag**p) ** (1.0 / p))


def korn_ratio(op: FirstOrderOperator, u, p: float = 2.0) -> float:
    """``||Du||_p / ||A[D]u||_p`` with spectral derivatives and uniform quadrature."""
    op = get_operator(op)
    v = _values(u)
    Du = spectral_gradient(v).values
    Au = spectral_apply(op, v).values
    num = _pnorm(np.linalg.norm(Du, axis=-1), p)
    den = _pnorm(np.linalg.norm(Au, axis=-1), p)
    if den <= 1e-12 * max(num, 1e-300) or den == 0.0:
        raise DegenerateFieldError("field is in the nullspace of the operator")
    return num / den


def p2_bound(op: FirstOrderOperator) -> float:
    """Sharp L^2 Korn constant ``sup |xi||v| / |A[xi]v| = 1 / min sigma_min``."""
    rep = _check_elliptic(op)
    return 1.0 / rep.min_singular_value


# ---------------------------------------------------------------------------
# Ornstein search


@dataclass
class RatioTrace:
    """Best-so-far L^1 ratio per optimiser iteration and resolution."""

    entries: list = field(default_factory=list)  # (iteration, best ratio, N)
    raw: list = field(default_factory=list)  # (iteration, ratio of the current iterate, N)
    best_field: Optional[TorusField] = None
    initial_ratio: float = float("nan")
    p2_bound: float = float("nan")
    vacuous: bool = False

    @property
    def best_ratio(self) -> float:
        return self.entries[-1][1] if self.entries else float("nan")

    def best_at(self, N: int) -> float:
        vals = [r for _, r, n in self.raw if n == N]
        return max(vals) if vals else float("nan")

    @property
    def improved(self) -> bool:
        return self.best_ratio > self.initial_ratio

    @property
    def exceeds_p2_bound(self) -> bool:
        return self.best_ratio > self.p2_bound

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "ratio", "N"])
            for it, r, n in self.entries:
                w.writerow([it, repr(float(r)), n])

    def to_dict(self) -> dict:
        return {
            "best_ratio": self.best_ratio,
            "initial_ratio": self.initial_ratio,
            "p2_bound": self.p2_bound,
            "exceeds_p2_bound": self.exceeds_p2_bound,
            "improved": self.improved,
            "vacuous": self.vacuous,
            "iterations": len(self.entries),
        }


class _SmoothedRatio:
    # sum sqrt(|Du|^2 + k^2) / sum sqrt(|Au|^2 + k^2) on band-limited fields
    def __init__(self, op, N, band):
        self.op = op
        self.grad = make_builtin("grad", 2)
        self.N = N
        self.band = band
        self.kappa = 1.0

    def project(self, x):
        return band_limit(x.reshape(self.N, self.N, 2), self.band)

    def __call__(self, x):
        u = self.project(x)
        Du = spectral_apply(self.grad, u).values
        Au = spectral_apply(self.op, u).values
        sD = np.sqrt(np.sum(Du * Du, axis=-1) + self.kappa**2)
        sA = np.sqrt(np.sum(Au * Au, axis=-1) + self.kappa**2)
        num, den = sD.sum(), sA.sum()
        J = num / den
        gnum = spectral_adjoint(self.grad, Du / sD[..., None])
        gden = spectral_adjoint(self.op, Au / sA[..., None])
        g = (gnum - J * gden) / den
        # maximise J: minimise -J
        return -J, -self.project(g).ravel()


def ornstein_search(
    op,
    p: float = 1.0,
    N: int = 64,
    budget: int = 2000,
    seed: int = 0,
    band: Optional[int] = None,
    restarts: int = 3,
    kappas=(1e-1, 1e-2, 1e-3),
    init=None,
    trace: Optional[RatioTrace] = None,
) -> RatioTrace:
    """Maximise ``||Du||_1 / ||A[D]u||_1`` over zero-mean band-limited torus fields.

    The L^1 norms are smoothed by ``sqrt(t^2 + kappa^2)`` with ``kappa`` (relative
    to the mean of ``|A[D]u|``) annealed over ``kappas``; each stage runs L-BFGS
    on the band-limited projection.  The first start is the extremal L^2 field
    (a shear wave) with a small seeded perturbation, or ``init`` (upsampled if
    coarser); further starts are seeded random fields.  The recorded trace is
    the unsmoothed ratio, best-so-far, so it never decreases.  Passing a
    previous ``trace`` continues it at the new resolution.
    """
    if p != 1:
        raise ValueError("the Ornstein search is defined for p = 1")
    op = get_operator(op)
    if op.n != 2 or op.dim_V != 2:
        raise ValueError("the search runs on 2D vector fields")
    rng = np.random.default_rng(seed)
    band = N // 4 if band is None else int(band)
    out = RatioTrace() if trace is None else trace
    out.p2_bound = p2_bound(op)
    it0 = out.entries[-1][0] + 1 if out.entries else 0
    best = out.best_ratio if out.entries else -np.inf
    best_field = out.best_field

    def record(it, u):
        nonlocal best, best_field
        r = korn_ratio(op, u, 1.0)
        out.raw.append((it, r, N))
        if r > best:
            best, best_field = r, TorusField(u.copy())
        out.entries.append((it, best, N))

    if kk_reduction(op, make_builtin("grad", 2)).exists:
        out.vacuous = True
        u = TorusField.from_function(N, lambda x, y: (np.sin(2 * np.pi * y), 0 * x)).values
        out.initial_ratio = korn_ratio(op, u, 1.0)
        record(it0, u)
        out.best_field = best_field
        return out

    starts = []
    if init is not None:
        iv = _values(init)
        starts.append(band_limit(upsample(iv, N).values if iv.shape[0] < N else iv, band))
    else:
        shear = TorusField.from_function(N, lambda x, y: (np.sin(2 * np.pi * y), 0 * x)).values
        noise = random_band_limited(N, 2, band, rng, decay=2.0)
        starts.append(shear + 0.05 * noise / max(1e-300, np.abs(noise).max()))
    for _ in range(restarts - 1):
        starts.append(random_band_limited(N, 2, band, rng, decay=1.5))

    if np.isnan(out.initial_ratio):
        out.initial_ratio = korn_ratio(op, starts[0], 1.0)
    obj = _SmoothedRatio(op, N, band)
    per_stage = max(1, budget // (len(starts) * len(kappas)))
    it = it0
    record(it, starts[0])
    for u0 in starts:
        x = u0.ravel().copy()
        for kap in kappas:
            u = obj.project(x)
            Au = spectral_apply(op, u).values
            obj.kappa = kap * float(np.mean(np.linalg.norm(Au, axis=-1)))

            def cb(xk):
                nonlocal it
                it += 1
                record(it, obj.project(xk))

            res = minimize(obj, x, jac=True, method="L-BFGS-B", callback=cb,
                           options={"maxiter": per_stage, "gtol": 1e-14, "ftol": 1e-15})
            x = res.x
            # keep the scale O(1)
            x /= max(np.abs(x).max(), 1e-300)
    out.best_field = best_field
    return out


# ---------------------------------------------------------------------------
# estimator


class SpectralRecovery(TransformerMixin, BaseEstimator):
    """Recover a periodic field from ``A[D]u``: ``transform`` applies ``G``.

    ``inverse_transform`` applies the operator itself, so
    ``transform(inverse_transform(u)) == u - mean(u)`` for band-limited ``u``.

    Parameters
    ----------
    operator : str or FirstOrderOperator, default="eps"
        Elliptic first-order operator in two dimensions.
    """

    def __init__(self, operator="eps"):
        self.operator = operator

    def fit(self, X, y=None):
        op = get_operator(self.operator, 2)
        rep = _check_elliptic(op)
        v = _values(X)
        if v.ndim != 3 or v.shape[-1] != op.dim_W:
            raise ValueError(f"expected an (N, N, {op.dim_W}) array")
        self.operator_ = op
        self.n_resolution_ = v.shape[0]
        self.ellipticity_margin_ = rep.min_singular_value
        self.pinv_symbols_ = _pinv_symbols(op, v.shape[0])
        return self

    def transform(self, X):
        check_is_fitted(self, "pinv_symbols_")
        v = _values(X)
        if v.shape[0] != self.n_resolution_:
            raise ValueError("resolution differs from the fitted one")
        return recover(self.operator_, TorusField(v), _pinv=self.pinv_symbols_).values

    def inverse_transform(self, X):
        check_is_fitted(self, "pinv_symbols_")
        return spectral_apply(self.operator_, X).values
