"""American put free boundary: solver, lattice oracle and shape diagnostics."""

from .asymptotics import AsymptoticSpec, Branch, asymptotic_spec, compare_near_expiry, evans_boundary, evans_curve
from .boundary import (
    BoundaryCurve,
    Coordinate,
    RegimeReport,
    Source,
    analyse_params,
    concavity_scan,
    convexity_check,
    extract_boundary,
    monotonicity_check,
    smooth_pasting_residual,
)
from .diagnostics import (
    boundary_identity_report,
    compute_v_field,
    compute_w_field,
    diagnose,
    trace_level_curves,
)
from .errors import (
    DomainError,
    ExtractionError,
    GridError,
    InputError,
    IterationLimitError,
    NumericalError,
    ParameterError,
    PutLabError,
    UnsupportedBranchError,
)
from .market import MarketParams, Regime, TransformedParams, boundary_at_expiry, classify_regime, european_put, transform
from .pde import Grid, InvariantReport, PriceSurface, Scheme, SolveReport, build_grid, invariant_report, residual_report, solve_lcp
from .tree import crr_boundary, crr_price

__version__ = "0.1.0"
