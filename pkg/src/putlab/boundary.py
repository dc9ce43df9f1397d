"""Free-boundary extraction and the shape checks run on extracted curves."""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ExtractionError, InputError, PutLabError
from .market import MarketParams, Regime, boundary_at_expiry, classify_regime, transform
from .pde import PriceSurface, Scheme, build_grid, solve_lcp

log = logging.getLogger(__name__)

NEAR_EXPIRY_STEPS = 4


class Source(enum.Enum):
    PDE = "PDE"
    TREE = "TREE"
    ASYMPTOTIC = "ASYMPTOTIC"


class Coordinate(enum.Enum):
    CALENDAR_X_OF_T = "CALENDAR_X_OF_T"
    TRANSFORMED_S_OF_T = "TRANSFORMED_S_OF_T"


@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """Sampled exercise boundary ``s(t)`` with its calendar mirror ``X_f(T)``.

    ``resolution`` is the log-price quantum of the source (grid spacing or
    lattice node gap) and ``time_step`` the transformed-time step.
    """

    t: np.ndarray
    s: np.ndarray
    params: MarketParams
    source: Source
    resolution: float = 0.0
    time_step: float = 0.0
    levels: np.ndarray | None = None
    skipped_levels: int = 0

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if t.shape != s.shape or t.ndim != 1:
            raise InputError("t and s must be 1-d arrays of equal length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    def __len__(self) -> int:
        return self.t.size

    @property
    def X(self) -> np.ndarray:
        return np.exp(self.s)

    @property
    def T(self) -> np.ndarray:
        return self.params.expiry - 2.0 * self.t / self.params.sigma**2

    @property
    def tau(self) -> np.ndarray:
        """Calendar time to expiry."""
        return 2.0 * self.t / self.params.sigma**2

    def is_ordered(self) -> bool:
        return bool(np.all(np.diff(self.t) > 0.0))

    def interp_s(self, t) -> np.ndarray:
        return np.interp(t, self.t, self.s)


@dataclass
class MonotonicityReport:
    monotone: bool
    violations: int
    worst_violation: float
    worst_t: float | None
    mono_tol: float
    averaged: bool


@dataclass
class PastingResiduals:
    t: np.ndarray
    derivative: np.ndarray
    value: np.ndarray


@dataclass
class ConvexityVerdict:
    convex: bool
    min_second_difference: float
    violation_intervals: list
    tolerance_used: float
    coordinate: Coordinate
    smoothed: bool = False
    samples: int = 0

    def as_dict(self) -> dict:
        return {
            "convex": self.convex,
            "min_second_difference": self.min_second_difference,
            "violation_intervals": [list(iv) for iv in self.violation_intervals],
            "tolerance_used": self.tolerance_used,
            "coordinate": self.coordinate.value,
            "smoothed": self.smoothed,
            "samples": self.samples,
        }


def _zero_crossings(u, psi, x, dx, i_star, method):
    """Sub-grid zero of ``u - psi`` to the right of the last active node."""
    rows = np.arange(u.shape[0])
    w0 = u[rows, i_star] - psi[i_star]
    w1 = u[rows, i_star + 1] - psi[i_star + 1]
    x0 = x[i_star]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(w1 > w0, -w0 / (w1 - w0), 0.0)
        if method == "quadratic":
            # near contact u - psi ~ c (x - s)^2, so its square root is linear
            nxt = np.minimum(i_star + 2, u.shape[1] - 1)
            w2 = u[rows, nxt] - psi[nxt]
            r1 = np.sqrt(np.maximum(w1, 0.0))
            r2 = np.sqrt(np.maximum(w2, 0.0))
            quad = 1.0 - r1 / (r2 - r1)
            frac = np.where((r2 > r1) & (w1 > 0.0), quad, frac)
    frac = np.clip(np.nan_to_num(frac), 0.0, 1.0)
    return x0 + frac * dx


def extract_boundary(surface: PriceSurface, method: str = "linear") -> BoundaryCurve:
    """Locate ``s(t_n)`` on every level ``n >= 1`` from the recorded active sets.

    The last active node below ``log K`` is refined to the zero crossing of
    ``u - psi``; ``method="linear"`` interpolates ``u - psi`` between that
    node and the next, ``method="quadratic"`` extrapolates its square root
    from the next two nodes, which follows the contact shape more closely.
    """
    if method not in ("linear", "quadratic"):
        raise InputError(f"unknown refinement method {method!r}")
    g = surface.grid
    x = g.x
    d = math.log(surface.params.strike)
    itm = int(np.searchsorted(x, d))  # first node with x >= d
    mask = surface.active[1:, :itm]
    has = mask.any(axis=1)
    if not has.any():
        raise ExtractionError("no active node below log K on any time level")
    levels = np.nonzero(has)[0] + 1
    skipped = int((~has).sum())
    if skipped:
        log.warning("%d time levels without an exercise node were skipped", skipped)
    last = itm - 1 - np.argmax(mask[has][:, ::-1], axis=1)
    s = _zero_crossings(surface.u[levels], surface.obstacle, x, g.dx, last, method)
    return BoundaryCurve(
        t=g.t[levels],
        s=s,
        params=surface.params,
        source=Source.PDE,
        resolution=g.dx,
        time_step=g.dt,
        levels=levels,
        skipped_levels=skipped,
    )


def monotonicity_check(
    curve: BoundaryCurve,
    mono_tol: float | None = None,
    pairwise_average: bool = False,
) -> MonotonicityReport:
    """``s`` must fall as ``t`` grows; rises larger than ``mono_tol`` are violations."""
    if len(curve) < 2:
        raise InputError("need at least two samples")
    if mono_tol is None:
        mono_tol = 0.5 * curve.resolution
    t, s = curve.t, curve.s
    if pairwise_average:
        t = 0.5 * (t[1:] + t[:-1])
        s = 0.5 * (s[1:] + s[:-1])
    rise = np.diff(s)
    bad = rise > mono_tol
    worst = int(np.argmax(rise))
    return MonotonicityReport(
        monotone=not bad.any(),
        violations=int(bad.sum()),
        worst_violation=float(max(rise[worst], 0.0)),
        worst_t=float(t[worst + 1]) if rise[worst] > 0.0 else None,
        mono_tol=float(mono_tol),
        averaged=pairwise_average,
    )


def smooth_pasting_residual(surface: PriceSurface, curve: BoundaryCurve) -> PastingResiduals:
    """Value and slope mismatch with the payoff at the extracted boundary.

    The slope is the forward difference over the grid cell that contains
    ``s(t)``, i.e. taken from the continuation side.  The value column is
    the interpolated excess ``u - psi`` at ``s(t)``.
    """
    if curve.levels is None:
        raise InputError("curve carries no surface levels; extract it from this surface")
    g = surface.grid
    x = g.x
    j = np.clip(np.floor((curve.s - g.x_min) / g.dx + 1e-9).astype(int), 0, g.nx - 2)
    u0 = surface.u[curve.levels, j]
    u1 = surface.u[curve.levels, j + 1]
    slope = (u1 - u0) / g.dx
    es = np.exp(curve.s)
    a = (curve.s - x[j]) / g.dx
    psi = surface.obstacle
    # value check interpolates u - psi, the same quantity the extraction zeroes
    excess = (1.0 - a) * (u0 - psi[j]) + a * (u1 - psi[j + 1])
    return PastingResiduals(
        t=curve.t.copy(),
        derivative=np.abs(slope + es),
        value=np.abs(excess),
    )


def _second_differences(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second differences rescaled to the mean spacing; exact ``y[i-1]-2y[i]+y[i+1]`` when uniform."""
    h = np.diff(t)
    slope = np.diff(y) / h
    dd = 2.0 * np.diff(slope) / (h[1:] + h[:-1])
    return dd * np.mean(h) ** 2


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def convexity_check(
    curve: BoundaryCurve,
    coordinate: Coordinate | str = Coordinate.CALENDAR_X_OF_T,
    tol_scale: float = 1.0,
    smooth: bool = False,
    exclude_near_expiry: bool = True,
    noise: float | None = None,
) -> ConvexityVerdict:
    """Second-difference convexity test with a tolerance tied to extraction noise.

    The log-price noise is ``2 * resolution``; in the calendar coordinate it
    is carried to price units by the largest ``X`` on the curve.  Samples
    with ``t < 4 * time_step`` are dropped unless ``exclude_near_expiry`` is
    off.  Violation intervals are reported in transformed time.
    """
    coordinate = Coordinate(coordinate)
    t, s = curve.t, curve.s
    if t.size >= 2 and not np.all(np.diff(t) > 0.0):
        raise InputError("boundary samples must have strictly increasing t")
    if exclude_near_expiry and curve.time_step > 0.0:
        keep = t >= NEAR_EXPIRY_STEPS * curve.time_step
        t, s = t[keep], s[keep]
    if smooth:
        if t.size < 3:
            raise InputError("smoothing needs at least three samples")
        s = np.concatenate([s[:1], (s[:-2] + s[1:-1] + s[2:]) / 3.0, s[-1:]])
    if t.size < 3:
        raise InputError("convexity check needs at least three samples")
    log_noise = 2.0 * curve.resolution if noise is None else noise
    if coordinate is Coordinate.TRANSFORMED_S_OF_T:
        y = s
        tol = tol_scale * log_noise
    else:
        # X_f(T) with T = T_F - 2 t / sigma^2 is affine in t, so second
        # differences along t carry over unchanged
        y = np.exp(s)
        tol = tol_scale * log_noise * float(y.max())
    d2 = _second_differences(t, y)
    fail = d2 < -tol
    intervals = [(float(t[a + 1]), float(t[b + 1])) for a, b in _runs(fail)]
    return ConvexityVerdict(
        convex=not intervals,
        min_second_difference=float(d2.min()),
        violation_intervals=intervals,
        tolerance_used=float(tol),
        coordinate=coordinate,
        smoothed=smooth,
        samples=int(t.size),
    )


@dataclass
class RegimeReport:
    regime: Regime
    params: MarketParams
    convex: bool | None = None
    min_second_difference: float | None = None
    violation_intervals: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    s_convex: bool | None = None
    s_min_second_difference: float | None = None
    status: str = "ok"
    error: str | None = None

    def as_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "params": self.params.as_dict(),
            "convex": self.convex,
            "min_second_difference": self.min_second_difference,
            "violation_intervals": [list(iv) for iv in self.violation_intervals],
            "tolerances": dict(self.tolerances),
            "s_convex": self.s_convex,
            "s_min_second_difference": self.s_min_second_difference,
            "status": self.status,
            "error": self.error,
        }


def regime_status(regime: Regime, convex: bool) -> str:
    """``ok``/``fail`` where convexity is established, ``exploratory`` elsewhere."""
    if regime.expects_convex:
        return "ok" if convex else "fail"
    return "exploratory"


def analyse_params(
    params: MarketParams,
    nx: int,
    nt: int,
    scheme: Scheme | str = Scheme.BRENNAN_SCHWARTZ,
    theta: float = 0.5,
    tol: float = 1e-8,
    tol_scale: float = 1.0,
    smooth: bool = False,
) -> RegimeReport:
    regime = classify_regime(params)
    report = RegimeReport(regime=regime, params=params)
    try:
        tp = transform(params)
        grid = build_grid(tp, params, nx, nt)
        surface, _ = solve_lcp(params, grid, scheme=scheme, theta=theta, tol=tol)
        curve = extract_boundary(surface)
        del surface
        cal = convexity_check(curve, Coordinate.CALENDAR_X_OF_T, tol_scale, smooth)
        tr = convexity_check(curve, Coordinate.TRANSFORMED_S_OF_T, tol_scale, smooth)
    except PutLabError as exc:
        report.status = "error"
        report.error = f"{type(exc).__name__}: {exc}"
        return report
    report.convex = cal.convex
    report.min_second_difference = cal.min_second_difference
    report.violation_intervals = cal.violation_intervals
    report.s_convex = tr.convex
    report.s_min_second_difference = tr.min_second_difference
    report.tolerances = {
        "calendar": cal.tolerance_used,
        "transformed": tr.tolerance_used,
        "tol_scale": tol_scale,
        "solver_tol": tol,
        "dx": grid.dx,
        "near_expiry_cutoff_t": NEAR_EXPIRY_STEPS * grid.dt,
        "expiry_boundary": boundary_at_expiry(params),
    }
    report.status = regime_status(regime, cal.convex)
    return report


def concavity_scan(
    params_list,
    nx: int = 801,
    nt: int = 800,
    scheme: Scheme | str = Scheme.BRENNAN_SCHWARTZ,
    theta: float = 0.5,
    tol: float = 1e-8,
    tol_scale: float = 1.0,
    smooth: bool = False,
    jobs: int = 1,
) -> list[RegimeReport]:
    """Solve, extract and test convexity for every parameter set.

    Rows come back in input order; a failing entry is recorded on its row
    and does not stop the sweep.
    """
    params_list = list(params_list)

    def run(p):
        return analyse_params(p, nx, nt, scheme, theta, tol, tol_scale, smooth)

    if jobs <= 1:
        return [run(p) for p in params_list]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, params_list))
