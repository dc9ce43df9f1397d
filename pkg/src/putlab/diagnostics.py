"""Numerical realisation of the fields used in the convexity argument.

On ``C_d = {s(t) < x < d}`` with ``d = log K`` the excess value over the
exercise payoff is ``w = u - (K - e^x)``.  It vanishes with its slope on the
boundary, ``w_xx(s(t), t) = Kk - h e^{s(t)}`` there, and the ratio
``v = w_xt / w_xx`` equals ``-s'(t)`` on the boundary.  Everything here is
read off a solved surface by finite differences; nothing is asserted about
the contradiction argument itself.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import savgol_filter

from .boundary import BoundaryCurve, extract_boundary
from .errors import DomainError, InputError
from .market import MarketParams, TransformedParams
from .pde import PriceSurface, operator_bands

log = logging.getLogger(__name__)

WXX_FLOOR_REL = 1e-4
EDGE_MARGIN = 2


@dataclass(frozen=True, eq=False)
class DiagnosticField:
    """Fields on a column window ``x[0] .. x[-1]`` covering ``C_d``, all levels.

    ``interior`` marks nodes at least ``margin`` cells inside ``C_d`` on the
    level itself and the previous one; ``valid`` additionally requires
    ``w_xx >= wxx_floor``.  ``s`` is NaN on levels without a boundary sample.
    """

    x: np.ndarray
    t: np.ndarray
    s: np.ndarray
    w: np.ndarray
    w_x: np.ndarray
    w_xx: np.ndarray
    w_xt: np.ndarray
    interior: np.ndarray
    valid: np.ndarray
    wxx_floor: float
    params: MarketParams
    tp: TransformedParams
    dx: float
    dt: float
    margin: int = EDGE_MARGIN
    floor_masked: int = 0
    v: np.ndarray | None = None
    s_prime: np.ndarray | None = None

    @property
    def in_cd(self) -> np.ndarray:
        d = self.tp.d
        return (self.x[None, :] > self.s[:, None]) & (self.x[None, :] < d)


@dataclass
class LevelCurve:
    alpha: float
    points: np.ndarray  # (n, 2) columns x, t
    t_monotone: bool

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "points": [[float(a), float(b)] for a, b in self.points],
            "t_monotone": self.t_monotone,
        }


@dataclass
class IdentityReport:
    """Per-level residuals of the boundary identities plus interior checks.

    Columns: ``w`` for ``w(s,t)``, ``w_x`` for ``w_x(s,t)``, ``w_xx`` for
    ``w_xx(s,t) - (Kk - h e^s)``, ``v`` for ``v(s,t) + s'(t)`` and
    ``sign`` for the along-boundary derivative of ``w_xx``, which should
    equal ``-h s' e^s``.  ``sign_positive`` is None where ``h = 0``.
    """

    t: np.ndarray
    w: np.ndarray
    w_x: np.ndarray
    w_xx: np.ndarray
    v: np.ndarray
    sign: np.ndarray
    sign_positive: np.ndarray | None
    L_wxx_max: float
    wxx_positive: bool
    wxx_min_interior: float
    defining_identity_max: float
    t_window: tuple

    columns = ("w", "w_x", "w_xx", "v", "sign")

    def max_residuals(self) -> dict:
        out = {c: float(np.nanmax(getattr(self, c))) for c in self.columns}
        out["L_wxx"] = self.L_wxx_max
        return out


def _x_derivatives(w: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    w_x = np.full_like(w, np.nan)
    w_xx = np.full_like(w, np.nan)
    w_x[:, 1:-1] = (w[:, 2:] - w[:, :-2]) / (2.0 * dx)
    w_xx[:, 1:-1] = (w[:, 2:] - 2.0 * w[:, 1:-1] + w[:, :-2]) / dx**2
    return w_x, w_xx


def _t_derivative(f: np.ndarray, dt: float) -> np.ndarray:
    return np.gradient(f, dt, axis=0, edge_order=1)


def compute_w_field(
    surface: PriceSurface,
    tp: TransformedParams | None = None,
    curve: BoundaryCurve | None = None,
    wxx_floor: float | None = None,
    margin: int = EDGE_MARGIN,
) -> DiagnosticField:
    """Excess value ``w`` and its finite-difference derivatives on ``C_d``."""
    if tp is None:
        tp = surface.tp
    if curve is None:
        curve = extract_boundary(surface, method="quadratic")
    g = surface.grid
    K = surface.params.strike
    if wxx_floor is None:
        wxx_floor = WXX_FLOOR_REL * K
    x_all = g.x
    s = np.full(g.nt, np.nan)
    s[curve.levels] = curve.s
    below = curve.s < tp.d - margin * g.dx
    if not below.any():
        raise DomainError("C_d is empty: the boundary never falls below log K")
    i_d = int(np.searchsorted(x_all, tp.d))  # first node at or above d
    i_lo = max(int(np.floor((np.nanmin(s) - g.x_min) / g.dx)) - 1, 0)
    cols = slice(i_lo, min(i_d + 2, g.nx))
    x = x_all[cols]
    w = surface.u[:, cols] - (K - np.exp(x))[None, :]
    w_x, w_xx = _x_derivatives(w, g.dx)
    w_xt = _t_derivative(w_x, g.dt)

    s_prev = s.copy()
    s_prev[1:] = np.fmax(s[1:], s[:-1])
    near = np.fmax(s, s_prev)
    interior = (x[None, :] - near[:, None] >= margin * g.dx) & (tp.d - x[None, :] >= margin * g.dx)
    interior &= np.isfinite(near)[:, None]
    interior[0] = False
    floor_ok = w_xx >= wxx_floor
    valid = interior & floor_ok
    floor_masked = int((interior & ~floor_ok).sum())
    if floor_masked:
        log.info("%d interior nodes masked by the w_xx floor", floor_masked)
    return DiagnosticField(
        x=x,
        t=g.t,
        s=s,
        w=w,
        w_x=w_x,
        w_xx=w_xx,
        w_xt=w_xt,
        interior=interior,
        valid=valid,
        wxx_floor=wxx_floor,
        params=surface.params,
        tp=tp,
        dx=g.dx,
        dt=g.dt,
        margin=margin,
        floor_masked=floor_masked,
    )


def boundary_slope(
    t: np.ndarray,
    s: np.ndarray,
    dx: float,
    min_points: int = 5,
    travel: float | None = None,
    clip: bool = True,
) -> np.ndarray:
    """``s'(t)`` from local quadratic least-squares fits, clipped to be non-positive.

    The extracted boundary carries a grid-locked ripple of a fraction of
    ``dx`` that repeats each time it crosses a node, so each fit spans the
    time in which the boundary travels ``travel`` in log-price (default
    ``0.5 * sqrt(dx)``, i.e. many node crossings), never fewer than
    ``min_points`` samples.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    n = s.size
    if n < min_points:
        raise InputError(f"need at least {min_points} boundary samples for a slope")
    if travel is None:
        travel = 0.5 * math.sqrt(dx)
    pilot_len = min(max(min_points, (n // 10) * 2 + 1), n if n % 2 else n - 1)
    pilot = np.gradient(savgol_filter(s, pilot_len, 2, mode="interp"), t)
    speed = np.maximum(np.abs(pilot), 1e-12)
    dt_mean = (t[-1] - t[0]) / (n - 1)
    half = np.clip(np.rint(0.5 * travel / (speed * dt_mean)), min_points // 2, max(n // 4, min_points // 2))
    out = np.empty(n)
    for i in range(n):
        hw = int(half[i])
        lo = min(max(i - hw, 0), max(n - 2 * hw - 1, 0))
        hi = min(lo + 2 * hw + 1, n)
        coef = np.polyfit(t[lo:hi] - t[i], s[lo:hi], 2)
        out[i] = coef[1]
    return np.minimum(out, 0.0) if clip else out


def ripple_depth(dx: float, slope: float) -> float:
    """Decay length of the node-crossing ripple, ``sqrt(dx / (pi |s'|))``."""
    return math.sqrt(dx / (math.pi * max(abs(slope), 1e-12)))


def compute_v_field(field: DiagnosticField) -> DiagnosticField:
    """``v = w_xt / w_xx`` on valid nodes; the boundary value is ``-s'``."""
    v = np.full_like(field.w, np.nan)
    ok = field.valid
    v[ok] = field.w_xt[ok] / field.w_xx[ok]
    rows = np.nonzero(np.isfinite(field.s))[0]
    s_prime = np.full_like(field.s, np.nan)
    s_prime[rows] = boundary_slope(field.t[rows], field.s[rows], field.dx)
    return replace(field, v=v, s_prime=s_prime)


def _one_sided_fit(w_row: np.ndarray, x: np.ndarray, s: float, dx: float):
    """Quadratic through the first three nodes right of ``s``; value, slope, curvature at ``s``."""
    j = int(np.floor((s - x[0]) / dx + 1e-9)) + 1
    if j + 2 >= x.size:
        return np.nan, np.nan, np.nan
    f0, f1, f2 = w_row[j], w_row[j + 1], w_row[j + 2]
    c2 = (f2 - 2.0 * f1 + f0) / dx**2
    c1 = (f2 - f0) / (2.0 * dx)
    z = s - x[j + 1]
    return f1 + c1 * z + 0.5 * c2 * z * z, c1 + c2 * z, c2


def _v_near_boundary(v_row, ok_row, x, s, depth, ripple_depths=3.0):
    """``v`` at the valid node closest to ``ripple_depths`` ripple lengths inside."""
    idx = np.nonzero(ok_row)[0]
    if idx.size == 0:
        return np.nan
    j = idx[np.argmin(np.abs(x[idx] - s - ripple_depths * depth))]
    return v_row[j]


def L_wxx_residual(field: DiagnosticField) -> np.ndarray:
    """``L w_xx + h e^x`` with the time-centred operator, NaN off well-inside nodes."""
    tp = field.tp
    lo, di, up = operator_bands(tp, field.dx)
    W = field.w_xx
    LW = np.full_like(W, np.nan)
    LW[:, 1:-1] = lo * W[:, :-2] + di * W[:, 1:-1] + up * W[:, 2:]
    out = np.full_like(W, np.nan)
    out[1:] = 0.5 * (LW[1:] + LW[:-1]) - (W[1:] - W[:-1]) / field.dt
    out += tp.h * np.exp(field.x)[None, :]
    ok = field.interior.copy()
    ok[:, 1:-1] &= field.interior[:, :-2] & field.interior[:, 2:]
    ok[:, [0, -1]] = False
    ok[1:] &= ok[:-1]
    out[~ok] = np.nan
    return out


def v_equation_residual(field: DiagnosticField) -> np.ndarray:
    """Residual of ``v_t - v_xx - (k-h-1 + 2 w_xxx/w_xx) v_x - (L w_xx / w_xx) v``.

    ``L w_xx`` takes its exact value ``-h e^x``.  NaN wherever a stencil
    reaches outside the valid nodes or the time axis.
    """
    if field.v is None:
        raise InputError("compute_v_field first")
    tp = field.tp
    dx, dt = field.dx, field.dt
    v, W = field.v, field.w_xx
    v_x, v_xx = _x_derivatives(v, dx)
    W_x, _ = _x_derivatives(W, dx)
    v_t = _t_derivative(v, dt)
    LW = -tp.h * np.exp(field.x)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        res = v_t - v_xx - (tp.drift + 2.0 * W_x / W) * v_x - (LW / W) * v
    # w_xt is one-sided on the end levels, which spoils v_t one level further in
    res[:2] = np.nan
    res[-2:] = np.nan
    return res


def v_equation_max(field: DiagnosticField, separation: float = 0.05, t_min_frac: float = 0.1) -> float:
    """Largest v-equation residual on nodes ``separation`` (log-price) clear of both edges of ``C_d``.

    The whole five-point stencil must sit on such nodes.  Near the free
    boundary the ratio ``v`` inherits the node-crossing ripple, so only
    well-separated nodes measure the equation itself.
    """
    res = v_equation_residual(field)
    m = field.valid.copy()
    m &= field.x[None, :] - field.s[:, None] >= separation
    m &= field.tp.d - field.x[None, :] >= separation
    m &= (field.t >= t_min_frac * field.t[-1])[:, None]
    m[1:] &= m[:-1].copy()
    m[:-1] &= m[1:].copy()
    m[:, 1:] &= m[:, :-1].copy()
    m[:, :-1] &= m[:, 1:].copy()
    vals = np.abs(res[m])
    vals = vals[np.isfinite(vals)]
    return float(vals.max()) if vals.size else float("nan")


def boundary_identity_report(
    field: DiagnosticField,
    curve: BoundaryCurve | None = None,
    tp: TransformedParams | None = None,
    params: MarketParams | None = None,
    t_min_frac: float = 0.1,
) -> IdentityReport:
    """Residuals of the boundary identities on levels with ``t >= t_min_frac * t_max``.

    Boundary values come from a quadratic through the three nodes just
    right of ``s(t)``.  ``v(s,t)`` is read at the valid node nearest three
    ripple depths inside the boundary, where the node-crossing ripple in
    ``w_xt`` has died out but the field is still boundary-local.
    """
    tp = field.tp if tp is None else tp
    params = field.params if params is None else params
    if field.v is None:
        field = compute_v_field(field)
    K = params.strike
    k, h = tp.k, tp.h
    t_all = field.t
    s_all = field.s
    if curve is not None:
        s_all = np.full_like(field.s, np.nan)
        idx = np.searchsorted(field.t, curve.t)
        s_all[idx] = curve.s
    t_cut = t_min_frac * t_all[-1]
    rows = np.nonzero(np.isfinite(s_all) & (t_all >= t_cut))[0]
    if rows.size < 3:
        raise InputError("too few boundary levels inside the reporting window")
    n = rows.size
    r_w, r_wx, r_wxx, r_v = (np.full(n, np.nan) for _ in range(4))
    g_wxx = np.full(n, np.nan)
    for m, row in enumerate(rows):
        sv = s_all[row]
        wv, wxv, wxxv = _one_sided_fit(field.w[row], field.x, sv, field.dx)
        target = K * k - h * math.exp(sv)
        r_w[m] = abs(wv)
        r_wx[m] = abs(wxv)
        r_wxx[m] = abs(wxxv - target)
        g_wxx[m] = wxxv
        slope = field.s_prime[row]
        v_b = _v_near_boundary(
            field.v[row], field.valid[row], field.x, sv, ripple_depth(field.dx, slope)
        )
        r_v[m] = abs(v_b + slope)
    # along-boundary derivative of w_xx, i.e. w_xxt + w_xxx s'
    t_rows = t_all[rows]
    # same travel-scaled fit as for s', but the sign is free
    dg = boundary_slope(t_rows, g_wxx, field.dx, clip=False) if n >= 5 else np.gradient(g_wxx, t_rows)
    expected = -h * field.s_prime[rows] * np.exp(s_all[rows])
    r_sign = np.abs(dg - expected)
    sign_positive = None if h == 0.0 else dg > 0.0

    L_res = L_wxx_residual(field)
    sel = (t_all >= t_cut)[:, None] & np.isfinite(L_res)
    L_max = float(np.abs(L_res[sel]).max()) if sel.any() else float("nan")

    interior = field.interior & (t_all >= t_cut)[:, None]
    wxx_int = field.w_xx[interior]
    wxx_min = float(wxx_int.min()) if wxx_int.size else float("nan")
    ok = field.valid & (t_all >= t_cut)[:, None]
    defining = float(np.abs(field.v[ok] * field.w_xx[ok] - field.w_xt[ok]).max(initial=0.0))
    return IdentityReport(
        t=t_rows,
        w=r_w,
        w_x=r_wx,
        w_xx=r_wxx,
        v=r_v,
        sign=r_sign,
        sign_positive=sign_positive,
        L_wxx_max=L_max,
        wxx_positive=bool(wxx_int.size and wxx_min > 0.0),
        wxx_min_interior=wxx_min,
        defining_identity_max=defining,
        t_window=(float(t_cut), float(t_all[-1])),
    )


def trace_level_curves(field: DiagnosticField, alphas, jobs: int = 1) -> list[LevelCurve]:
    """Marching-squares contours of ``v`` restricted to the valid mask.

    A field that is constant over the valid nodes has no well-defined level
    set and yields no curves.  Levels are traced concurrently with ``jobs``
    workers; the result keeps the order of ``alphas``.
    """
    from skimage.measure import find_contours

    if field.v is None:
        raise InputError("compute_v_field first")
    mask = field.valid & np.isfinite(field.v)
    if mask.sum() < 4:
        return []
    vals = field.v[mask]
    if float(vals.max() - vals.min()) == 0.0:
        return []
    img = np.where(mask, field.v, 0.0)
    rows_idx = np.arange(field.t.size)
    cols_idx = np.arange(field.x.size)

    def trace(alpha):
        out = []
        for path in find_contours(img, float(alpha), mask=mask):
            t = np.interp(path[:, 0], rows_idx, field.t)
            x = np.interp(path[:, 1], cols_idx, field.x)
            dt = np.diff(t)
            mono = bool(np.all(dt >= -1e-15) or np.all(dt <= 1e-15))
            out.append(LevelCurve(float(alpha), np.column_stack([x, t]), mono))
        return out

    alphas = [float(a) for a in alphas]
    if jobs > 1 and len(alphas) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_alpha = list(pool.map(trace, alphas))
    else:
        per_alpha = [trace(a) for a in alphas]
    return [c for group in per_alpha for c in group]


def diagnose(surface: PriceSurface, curve: BoundaryCurve | None = None, **kw) -> tuple[DiagnosticField, IdentityReport]:
    """Full pipeline: w field, v field and the identity report."""
    fld = compute_w_field(surface, curve=curve)
    fld = compute_v_field(fld)
    return fld, boundary_identity_report(fld, **kw)
