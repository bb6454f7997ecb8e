"""Small input-validation helpers shared by the estimators and functions."""
from __future__ import annotations

import numbers

import numpy as np


def check_scalar(x, name, *, lower=None, upper=None, lower_inclusive=True, types=numbers.Real):
    if not isinstance(x, types) or isinstance(x, bool):
        raise TypeError(f"{name} must be a real number, got {type(x).__name__}")
    x = float(x) if types is numbers.Real else x
    if not np.isfinite(x):
        raise ValueError(f"{name} must be finite")
    if lower is not None:
        bad = x < lower if lower_inclusive else x <= lower
        if bad:
            op = ">=" if lower_inclusive else ">"
            raise ValueError(f"{name} must be {op} {lower}, got {x}")
    if upper is not None and x > upper:
        raise ValueError(f"{name} must be <= {upper}, got {x}")
    return x


def check_matrix_stack(a, name, *, last=None):
    a = np.asarray(a, dtype=float)
    if last is not None and a.shape[-1] != last:
        raise ValueError(f"{name} must have trailing dimension {last}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_field(field, dim=None, name="field"):
    from .grid import Field

    if not isinstance(field, Field):
        raise TypeError(f"{name} must be a grid Field")
    if dim is not None and field.dim != dim:
        raise ValueError(f"{name} has {field.dim} components, expected {dim}")
    return field


def check_same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
