"""Numerical toolkit for linear-growth variational problems driven by
first-order constant-coefficient operators such as the symmetric gradient."""

__version__ = "0.1.0"

from .diagnostics import caccioppoli_ratio, excess_scan, nikolskii_quotient
from .grid import (
    Field,
    Grid,
    RigidMotion,
    TensorField,
    VectorField,
    bmo_seminorm,
    finite_difference,
    load_binary,
    load_csv,
    lp_norm,
    mollify,
    rigid_project,
    save_binary,
    save_csv,
)
from .integrands import (
    GrowthError,
    Integrand,
    NonConvexError,
    RecessionDivergence,
    convexity_and_gradient_check,
    get_integrand,
    growth_constants,
    make_mp,
    make_norm,
    mu_check,
    recession,
)
from .operators import (
    FirstOrderOperator,
    adjoint_symbol,
    apply,
    ellipticity_margin,
    get_operator,
    kk_reduction,
    make_builtin,
    symbol,
)
from .relaxed import BVPiecewise1D, EnergyBreakdown, relaxed_energy_1d, relaxed_energy_grid
from .solver import (
    Problem,
    SolveReport,
    StabilizedMinimizer,
    ekeland_certificate,
    el_residual,
    infimum_lower_bound,
    minimize_stabilized,
    viscosity_sweep,
)
from .spectral import (
    RatioTrace,
    SpectralRecovery,
    TorusField,
    korn_ratio,
    ornstein_search,
    recover,
    spectral_apply,
)
from .trace import ring_integral, trace_blowup

__all__ = [
    "BVPiecewise1D",
    "EnergyBreakdown",
    "Field",
    "FirstOrderOperator",
    "Grid",
    "GrowthError",
    "Integrand",
    "NonConvexError",
    "Problem",
    "RatioTrace",
    "RecessionDivergence",
    "RigidMotion",
    "SolveReport",
    "SpectralRecovery",
    "StabilizedMinimizer",
    "TensorField",
    "TorusField",
    "VectorField",
    "adjoint_symbol",
    "apply",
    "bmo_seminorm",
    "caccioppoli_ratio",
    "convexity_and_gradient_check",
    "ekeland_certificate",
    "el_residual",
    "ellipticity_margin",
    "excess_scan",
    "finite_difference",
    "get_integrand",
    "get_operator",
    "growth_constants",
    "infimum_lower_bound",
    "kk_reduction",
    "korn_ratio",
    "ornstein_search",
    "load_binary",
    "load_csv",
    "lp_norm",
    "make_builtin",
    "make_mp",
    "make_norm",
    "minimize_stabilized",
    "mollify",
    "mu_check",
    "nikolskii_quotient",
    "recession",
    "recover",
    "relaxed_energy_1d",
    "relaxed_energy_grid",
    "rigid_project",
    "ring_integral",
    "save_binary",
    "save_csv",
    "spectral_apply",
    "symbol",
    "trace_blowup",
    "viscosity_sweep",
]
