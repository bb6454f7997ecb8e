"""Convex energy densities of linear growth and their numerical certificates.

An integrand acts on coordinate vectors of ``W`` (for symmetric matrices the
orthonormal coordinates from :mod:`symconvex.operators`), vectorised over any
leading axes.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Integrand",
    "MuReport",
    "CheckReport",
    "RecessionDivergence",
    "GrowthError",
    "NonConvexError",
    "make_mp",
    "make_norm",
    "get_integrand",
    "recession",
    "growth_constants",
    "mu_check",
    "convexity_and_gradient_check",
]


class RecessionDivergence(ArithmeticError):
    """``t f(Z/t)`` does not converge: the integrand grows faster than linearly."""


class GrowthError(ValueError):
    """Sampled growth is incompatible with ``c1|Z| <= f(Z) <= c2(1+|Z|)``."""


class NonConvexError(ValueError):
    """A negative second variation was sampled."""


def _norm(Z):
    return np.linalg.norm(Z, axis=-1)


def _split(B, A, r):
    # squared lengths of the components of A parallel and orthogonal to B
    safe = np.where(r > 0, r, 1.0)[..., None]
    Bhat = np.where(r[..., None] > 0, B / safe, 0.0)
    c = np.sum(Bhat * A, axis=-1)
    perp = A - c[..., None] * Bhat
    return c * c, np.sum(perp * perp, axis=-1)


class Integrand:
    """Energy density ``f`` with first and second variations.

    Only ``value`` is required.  A missing gradient is synthesised by central
    differences with step ``1e-5 (1 + |Z|)``; a missing Hessian form by central
    differences of the gradient.

    Parameters
    ----------
    value : callable
        ``Z (..., dim) -> (...)``.
    dim : int
        Number of coordinates of the argument.
    gradient : callable, optional
        ``Z (..., dim) -> (..., dim)``.
    hessian_form : callable, optional
        ``(B, A) -> <f''(B) A, A>``.
    name : str
    c1, c2 : float, optional
        Declared linear-growth constants.
    mu, lam, Lam : float, optional
        Declared mu-ellipticity data.
    mu_region : str
        ``"global"`` or ``"away_from_unit_ball"``.
    """

    def __init__(
        self,
        value: Callable,
        dim: int,
        gradient: Optional[Callable] = None,
        hessian_form: Optional[Callable] = None,
        *,
        name: str = "custom",
        c1: Optional[float] = None,
        c2: Optional[float] = None,
        mu: Optional[float] = None,
        lam: Optional[float] = None,
        Lam: Optional[float] = None,
        mu_region: str = "global",
    ):
        if int(dim) != dim or dim < 1:
            raise ValueError("dim must be a positive integer")
        self._value = value
        self._gradient = gradient
        self._hessian_form = hessian_form
        self.dim = int(dim)
        self.name = name
        self.c1, self.c2 = c1, c2
        self.mu, self.lam, self.Lam = mu, lam, Lam
        self.mu_region = mu_region

    def __repr__(self):
        return f"Integrand({self.name!r}, dim={self.dim})"

    @property
    def has_closed_form(self) -> bool:
        return self._gradient is not None and self._hessian_form is not None

    def value(self, Z):
        return self._value(np.asarray(Z, dtype=float))

    __call__ = value

    def gradient(self, Z):
        Z = np.asarray(Z, dtype=float)
        if self._gradient is not None:
            return self._gradient(Z)
        step = 1e-5 * (1.0 + _norm(Z))[..., None]
        g = np.empty(Z.shape)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            g[..., k] = (self._value(Z + step * e) - self._value(Z - step * e)) / (2 * step[..., 0])
        return g

    def hessian_form(self, B, A):
        B = np.asarray(B, dtype=float)
        A = np.asarray(A, dtype=float)
        if self._hessian_form is not None:
            return self._hessian_form(B, A)
        nA = np.maximum(_norm(A), 1e-300)[..., None]
        s = 1e-5 * (1.0 + _norm(B))[..., None] / nA
        dg = self.gradient(B + s * A) - self.gradient(B - s * A)
        return np.sum(dg * A, axis=-1) / (2 * s[..., 0])

    def hessian(self, B) -> np.ndarray:
        """Hessian matrices ``(..., dim, dim)`` by polarisation of the form."""
        B = np.asarray(B, dtype=float)
        H = np.empty(B.shape[:-1] + (self.dim, self.dim))
        eye = np.eye(self.dim)
        for i in range(self.dim):
            H[..., i, i] = self.hessian_form(B, np.broadcast_to(eye[i], B.shape))
            for j in range(i + 1, self.dim):
                p = self.hessian_form(B, np.broadcast_to(eye[i] + eye[j], B.shape))
                m = self.hessian_form(B, np.broadcast_to(eye[i] - eye[j], B.shape))
                H[..., i, j] = H[..., j, i] = 0.25 * (p - m)
        return H

    def declared(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "c1": self.c1,
            "c2": self.c2,
            "mu": self.mu,
            "lambda": self.lam,
            "Lambda": self.Lam,
            "mu_region": self.mu_region,
        }


def make_mp(p: float, dim: int = 3) -> Integrand:
    """Area-type integrand ``m_p(Z) = (1 + |Z|^p)^(1/p)``, ``p > 1``."""
    p = float(p)
    if not p > 1:
        raise ValueError(f"m_p requires p > 1, got {p}")

    def value(Z):
        return (1.0 + _norm(Z) ** p) ** (1.0 / p)

    def gradient(Z):
        r = _norm(Z)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (1.0 + r**p) ** (1.0 / p - 1.0) * r ** (p - 2.0)
        a = np.where(r > 0, a, 0.0)
        return a[..., None] * Z

    def hessian_form(B, A):
        r = _norm(B)
        A2 = np.sum(A * A, axis=-1)
        par2, perp2 = _split(B, A, r)
        q = 1.0 + r**p
        with np.errstate(divide="ignore", invalid="ignore"):
            a = q ** (1.0 / p - 1.0) * r ** (p - 2.0)  # g'(r)/r
            b = (p - 1.0) * r ** (p - 2.0) * q ** (1.0 / p - 2.0)  # g''(r)
            form = a * perp2 + b * par2
        if p == 2.0:
            at_zero = A2
        elif p > 2.0:
            at_zero = np.zeros_like(A2)
        else:
            at_zero = np.where(A2 > 0, np.inf, 0.0)
        return np.where(r > 0, form, at_zero)

    if p == 2.0:
        mu, lam, Lam, region = 3.0, 1.0, 1.0, "global"
    else:
        mu, lam, Lam, region = p + 1.0, None, None, "away_from_unit_ball"
    return Integrand(
        value, dim, gradient, hessian_form,
        name=f"mp:{p:g}", c1=1.0, c2=1.0, mu=mu, lam=lam, Lam=Lam, mu_region=region,
    )


def make_norm(dim: int = 3, sign: float = 1.0) -> Integrand:
    """Euclidean norm ``sign * |Z|`` (``sign=-1`` gives a concave test case)."""

    def value(Z):
        return sign * _norm(Z)

    def gradient(Z):
        r = _norm(Z)[..., None]
        return sign * np.where(r > 0, Z / np.where(r > 0, r, 1.0), 0.0)

    def hessian_form(B, A):
        r = _norm(B)
        _, perp2 = _split(B, A, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            form = perp2 / r
        return sign * np.where(r > 0, form, np.inf)

    name = "norm" if sign > 0 else "negnorm"
    return Integrand(value, dim, gradient, hessian_form, name=name, c1=1.0, c2=1.0)


def get_integrand(desc, dim: int = 3) -> Integrand:
    """Resolve ``"mp:<p>"``, ``"norm"``/``"abs"`` or pass an :class:`Integrand` through."""
    if isinstance(desc, Integrand):
        return desc
    if not isinstance(desc, str):
        raise TypeError(f"cannot interpret {desc!r} as an integrand")
    m = re.fullmatch(r"\s*mp:\s*([0-9.eE+-]+)\s*", desc)
    if m:
        return make_mp(float(m.group(1)), dim)
    if desc.strip() in ("norm", "abs"):
        return make_norm(dim)
    raise ValueError(f"unknown integrand {desc!r}")


# ---------------------------------------------------------------------------
# recession function


def _aitken(s0, s1, s2):
    d1, d2 = s1 - s0, s2 - s1
    den = d2 - d1
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = s2 - d2 * d2 / den
        q = d2 / d1
    converged = np.abs(d2) <= 1e-13 * np.maximum(np.abs(s2), 1e-300)
    usable = (den != 0) & np.isfinite(acc) & (np.abs(q) < 1.0) & ~converged
    return np.where(usable, acc, s2)


def recession(f: Integrand, Z, K: int = 40, return_error: bool = False):
    """Extrapolated ``lim_{t -> 0} t f(Z/t)`` along ``t_k = 2^-k``, ``k <= K``.

    Aitken's delta-squared process on the last three iterates accelerates the
    limit; the error estimate is the size of that correction plus the last
    iterate difference.
    """
    if K < 8:
        raise ValueError("K must be at least 8")
    Z = np.asarray(Z, dtype=float)
    ts = 2.0 ** -np.arange(K + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        seq = np.stack([t * f.value(Z / t) for t in ts])
    if not np.all(np.isfinite(seq)):
        raise RecessionDivergence("t f(Z/t) is not finite along the schedule")
    if np.any(seq[-1] > 1.5 * np.abs(seq[-2]) + 1e-300):
        raise RecessionDivergence("t f(Z/t) grows along the schedule (superlinear integrand)")
    val = _aitken(seq[-3], seq[-2], seq[-1])
    err = np.abs(val - seq[-1]) + np.abs(seq[-1] - seq[-2])
    if val.ndim == 0:
        val, err = float(val), float(err)
    return (val, err) if return_error else val


# ---------------------------------------------------------------------------
# growth


def _directions(rng, m, dim):
    g = rng.standard_normal((m, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def growth_constants(f: Integrand, radius_sweep=None, directions: int = 64, seed: int = 0, tol: float = 1e-8):
    """Empirical ``(c1, c2)`` with ``c1 = min f/|Z|`` (``|Z| >= 1``), ``c2 = max f/(1+|Z|)``.

    Raises :class:`GrowthError` when ``c1 <= tol`` or when the per-radius maximum
    of ``f/(1+|Z|)`` keeps growing over the largest radii.
    """
    radii = np.logspace(-2, 6, 33) if radius_sweep is None else np.asarray(radius_sweep, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and increasing")
    dirs = _directions(np.random.default_rng(seed), directions, f.dim)
    Z = radii[:, None, None] * dirs[None]
    vals = f.value(Z)
    lower = vals / radii[:, None]
    upper = vals / (1.0 + radii[:, None])
    big = radii >= 1.0
    c1 = float(lower[big].min()) if big.any() else float("nan")
    c2 = float(upper.max())
    per_r = upper.max(axis=1)
    if len(radii) >= 3 and radii[-1] > radii[-3]:
        slope = np.polyfit(np.log(radii[-3:]), np.log(np.maximum(per_r[-3:], 1e-300)), 1)[0]
        if slope > 0.1:
            raise GrowthError(f"f/(1+|Z|) grows like |Z|^{slope:.2f}: not of linear growth")
    if not np.isfinite(c2):
        raise GrowthError("non-finite values sampled")
    if big.any() and not c1 > tol:
        raise GrowthError(f"c1 estimate {c1:g} is not positive: f is not coercive")
    return c1, c2


# ---------------------------------------------------------------------------
# mu-ellipticity


@dataclass
class MuReport:
    passed: bool
    mu: float
    lambda_est: float
    Lambda_est: float
    worst_lower_pair: tuple
    worst_upper_pair: tuple
    samples: int
    lower_tail_slope: float = 0.0
    upper_tail_slope: float = 0.0
    reasons: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "mu": self.mu,
            "lambda_est": self.lambda_est,
            "Lambda_est": self.Lambda_est,
            "worst_lower_pair": [np.asarray(x).tolist() for x in self.worst_lower_pair],
            "worst_upper_pair": [np.asarray(x).tolist() for x in self.worst_upper_pair],
            "samples": self.samples,
            "lower_tail_slope": self.lower_tail_slope,
            "upper_tail_slope": self.upper_tail_slope,
            "reasons": list(self.reasons),
        }


def _tail_slope(mag, ratio, reducer):
    # log-log slope of the per-decade extreme over |B| >= 10
    sel = mag >= 10.0
    if sel.sum() < 4:
        return 0.0
    dec = np.floor(np.log10(mag[sel]))
    xs, ys = [], []
    for d in np.unique(dec):
        m = dec == d
        if m.sum() < 10:
            continue
        xs.append(d + 0.5)
        ys.append(np.log10(max(reducer(ratio[sel][m]), 1e-300)))
    if len(xs) < 2:
        return 0.0
    return float(np.polyfit(xs, ys, 1)[0])


def mu_check(
    f: Integrand,
    mu: float,
    count: int = 10_000,
    max_magnitude: float = 1e4,
    seed: int = 0,
    min_magnitude: float = 0.0,
    lam: Optional[float] = None,
    tol: float = 1e-6,
    slope_tol: float = 0.1,
) -> MuReport:
    """Sample the two-sided bound
    ``lam |A|^2 (1+|B|^2)^(-mu/2) <= <f''(B)A, A> <= Lam |A|^2 (1+|B|^2)^(-1/2)``.

    ``|B|`` is drawn log-uniformly (plus ``B = 0`` when admitted), and ``A`` is
    random, parallel to ``B`` or orthogonal to ``B`` in equal shares.  A bound
    fails if its sampled extreme vanishes, diverges, or drifts as a power of
    ``|B|`` over the top decades.  ``min_magnitude=1`` restricts to the region
    away from the unit ball.
    """
    if not mu > 1:
        raise ValueError("mu must be > 1")
    rng = np.random.default_rng(seed)
    dim = f.dim
    lo = max(min_magnitude, 1e-3)
    mags = 10 ** rng.uniform(np.log10(lo), np.log10(max_magnitude), count)
    if min_magnitude <= 0.0:
        mags[: max(1, count // 100)] = 0.0
    mags[-1] = max_magnitude
    B = mags[:, None] * _directions(rng, count, dim)
    A = _directions(rng, count, dim)
    kind = np.arange(count) % 3
    nz = mags > 0
    Bhat = np.where(nz[:, None], B / np.where(nz, mags, 1.0)[:, None], 0.0)
    par = (kind == 1) & nz
    A[par] = Bhat[par]
    perp = (kind == 2) & nz & (dim > 1)
    if perp.any():
        Ap = A[perp] - np.sum(A[perp] * Bhat[perp], axis=1, keepdims=True) * Bhat[perp]
        A[perp] = Ap / np.linalg.norm(Ap, axis=1, keepdims=True)
    form = f.hessian_form(B, A)
    A2 = np.sum(A * A, axis=1)
    if np.any(form < -1e-10 * A2):
        i = int(np.argmin(form / A2))
        raise NonConvexError(f"negative second variation {form[i]:g} at |B|={mags[i]:g}")
    w = 1.0 + mags**2
    lower = form * w ** (mu / 2) / A2
    upper = form * w**0.5 / A2
    il, iu = int(np.argmin(lower)), int(np.argmax(upper))
    lam_est, Lam_est = float(lower[il]), float(upper[iu])
    ls = _tail_slope(mags, lower, np.min)
    us = _tail_slope(mags, upper, np.max)
    reasons = []
    if not lam_est > 1e-12:
        reasons.append("lower bound vanishes")
    if ls < -slope_tol:
        reasons.append(f"lower ratio decays like |B|^{ls:.2f}")
    if not np.isfinite(Lam_est):
        reasons.append("upper bound is infinite")
    if us > slope_tol:
        reasons.append(f"upper ratio grows like |B|^{us:.2f}")
    if lam is None and f.mu is not None and f.lam is not None and np.isclose(mu, f.mu):
        lam = f.lam
    if lam is not None and lam_est < lam * (1 - tol):
        reasons.append(f"lambda_est {lam_est:g} below declared {lam:g}")
    return MuReport(
        passed=not reasons,
        mu=float(mu),
        lambda_est=lam_est,
        Lambda_est=Lam_est,
        worst_lower_pair=(B[il].copy(), A[il].copy()),
        worst_upper_pair=(B[iu].copy(), A[iu].copy()),
        samples=count,
        lower_tail_slope=ls,
        upper_tail_slope=us,
        reasons=reasons,
    )


# ---------------------------------------------------------------------------
# convexity / gradient consistency


@dataclass
class CheckReport:
    ok: bool
    hessian_ok: bool
    midpoint_ok: bool
    gradient_ok: bool
    samples: int
    max_gradient_error: float
    first_violation: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "hessian_ok": self.hessian_ok,
            "midpoint_ok": self.midpoint_ok,
            "gradient_ok": self.gradient_ok,
            "samples": self.samples,
            "max_gradient_error": self.max_gradient_error,
            "first_violation": self.first_violation,
        }


def convexity_and_gradient_check(f: Integrand, count: int = 200, seed: int = 0) -> CheckReport:
    """Check ``f'' >= 0``, midpoint convexity and the gradient against central differences."""
    rng = np.random.default_rng(seed)
    dim = f.dim
    mags = 10 ** rng.uniform(-2, 2, (3, count))
    X = mags[0, :, None] * _directions(rng, count, dim)
    Y = mags[1, :, None] * _directions(rng, count, dim)
    A = _directions(rng, count, dim)
    violation = None

    form = f.hessian_form(X, A)
    bad_h = np.flatnonzero(~(form >= -1e-10))
    hessian_ok = bad_h.size == 0
    if not hessian_ok:
        i = bad_h[0]
        violation = {"check": "hessian", "B": X[i].tolist(), "A": A[i].tolist(), "value": float(form[i])}

    mid = f.value(0.5 * (X + Y))
    avg = 0.5 * (f.value(X) + f.value(Y))
    bad_m = np.flatnonzero(~(mid <= avg + 1e-10))
    midpoint_ok = bad_m.size == 0
    if not midpoint_ok and violation is None:
        i = bad_m[0]
        violation = {"check": "midpoint", "X": X[i].tolist(), "Y": Y[i].tolist(),
                     "excess": float(mid[i] - avg[i])}

    g = f.gradient(X)
    step = 1e-5 * (1.0 + _norm(X))
    fd = np.empty_like(X)
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = 1.0
        fd[:, k] = (f.value(X + step[:, None] * e) - f.value(X - step[:, None] * e)) / (2 * step)
    err = _norm(g - fd) / np.maximum(_norm(fd), 1.0)
    bad_g = np.flatnonzero(~(err <= 1e-5))
    gradient_ok = bad_g.size == 0
    if not gradient_ok and violation is None:
        i = bad_g[0]
        violation = {"check": "gradient", "Z": X[i].tolist(), "relative_error": float(err[i])}

    return CheckReport(
        ok=hessian_ok and midpoint_ok and gradient_ok,
        hessian_ok=hessian_ok,
        midpoint_ok=midpoint_ok,
        gradient_ok=gradient_ok,
        samples=count,
        max_gradient_error=float(np.nanmax(err)),
        first_violation=violation,
    )
