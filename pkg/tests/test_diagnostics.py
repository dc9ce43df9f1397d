import math

import numpy as np
import pytest

from putlab.boundary import BoundaryCurve, Source, extract_boundary
from putlab.diagnostics import (
    DiagnosticField,
    L_wxx_residual,
    boundary_identity_report,
    boundary_slope,
    compute_v_field,
    compute_w_field,
    diagnose,
    ripple_depth,
    trace_level_curves,
    v_equation_max,
)
from putlab.errors import DomainError, InputError
from putlab.market import MarketParams, transform

from conftest import solved


def field_for(r, q, nx):
    surface, _ = solved(r, q, 0.2, nx, nx - 1)
    return compute_v_field(compute_w_field(surface)), surface


def test_w_field_on_obstacle_and_operator(standard_surface):
    fld = compute_w_field(standard_surface)
    tp = fld.tp
    K = fld.params.strike
    # w vanishes on active nodes below log K
    i0 = int(np.argmin(np.abs(standard_surface.grid.x - fld.x[0])))
    cols = slice(i0, i0 + fld.x.size)
    on_obstacle = standard_surface.active[:, cols] & (fld.x[None, :] < tp.d)
    assert np.max(np.abs(fld.w[on_obstacle])) <= standard_surface.act_tol
    # L w = Kk - h e^x on C_d, with L = d_xx + (k-h-1) d_x - k - d_t
    w = fld.w
    ok = fld.interior.copy()
    ok[1:] &= fld.interior[:-1]
    n = slice(1, None)
    Lw = fld.w_xx[n] + tp.drift * fld.w_x[n] - tp.k * w[n] - (w[1:] - w[:-1]) / fld.dt
    target = K * tp.k - tp.h * np.exp(fld.x)
    err = np.abs(Lw - target[None, :])[ok[1:] & (fld.t[1:] >= 0.1 * fld.t[-1])[:, None]]
    assert np.nanmax(err) < 0.05 * K * tp.k


def test_empty_cd_raises(standard_surface):
    curve = extract_boundary(standard_surface)
    high = BoundaryCurve(curve.t, np.full_like(curve.s, math.log(100.0) + 0.1),
                         curve.params, Source.PDE, curve.resolution, curve.time_step, curve.levels)
    with pytest.raises(DomainError):
        compute_w_field(standard_surface, curve=high)


def test_identities_decrease_and_wxx_positive():
    reps = []
    for nx in (401, 801):
        fld, _ = field_for(0.06, 0.03, nx)
        rep = boundary_identity_report(fld)
        reps.append(rep.max_residuals())
        assert rep.wxx_positive and rep.wxx_min_interior > 0
        assert rep.defining_identity_max < 1e-9
    for key in ("w", "w_x", "w_xx", "v", "L_wxx"):
        assert reps[1][key] < reps[0][key], key


def test_wxx_boundary_value_order_dx():
    errs = []
    for nx in (401, 801, 1601):
        fld, _ = field_for(0.06, 0.03, nx)
        errs.append(np.nanmax(boundary_identity_report(fld).w_xx))
    assert math.log2(errs[0] / errs[1]) > 0.5 and math.log2(errs[1] / errs[2]) > 0.5


def test_v_positive_near_boundary():
    fld, _ = field_for(0.06, 0.03, 801)
    rows = np.nonzero(np.isfinite(fld.s) & (fld.t >= 0.1 * fld.t[-1]))[0]
    near = []
    for row in rows:
        idx = np.nonzero(fld.valid[row])[0]
        if idx.size:
            near.append(fld.v[row, idx[0]])
    assert np.all(np.asarray(near) > 0)


def test_zero_dividend_skips_sign_check():
    fld, _ = field_for(0.05, 0.0, 401)
    rep = boundary_identity_report(fld)
    assert rep.sign_positive is None
    # with h = 0 the boundary value of w_xx is Kk
    assert np.nanmedian(rep.w_xx) < 0.5 * 100.0 * fld.tp.k


def test_l_wxx_matches_exact_operator():
    fld, _ = field_for(0.06, 0.03, 801)
    res = L_wxx_residual(fld)
    assert np.nanmax(np.abs(res[fld.t >= 0.1 * fld.t[-1]])) < 1e-2


def test_v_equation_residual_decreases():
    vals = [v_equation_max(field_for(0.06, 0.03, nx)[0]) for nx in (401, 801, 1601)]
    assert vals[0] > vals[1] > vals[2]


def test_boundary_slope_exact_on_parabola():
    t = np.linspace(0.0, 0.02, 400)
    s = 4.6 - 3.0 * t + 20.0 * t**2
    fit = boundary_slope(t, s, dx=0.01)
    np.testing.assert_allclose(fit, np.minimum(-3.0 + 40.0 * t, 0.0), atol=1e-9)
    free = boundary_slope(t, 4.6 + 3.0 * t, dx=0.01, clip=False)
    np.testing.assert_allclose(free, 3.0, atol=1e-9)
    with pytest.raises(InputError):
        boundary_slope(t[:3], s[:3], dx=0.01)
    assert ripple_depth(0.01, -1.0) == pytest.approx(math.sqrt(0.01 / math.pi))


def _toy_field(v):
    nt, nx = v.shape
    p = MarketParams(0.06, 0.03, 0.2, 100.0, 1.0)
    tp = transform(p)
    t = np.linspace(0.0, 0.02, nt)
    x = np.linspace(tp.d - 0.5, tp.d, nx)
    z = np.zeros((nt, nx))
    return DiagnosticField(
        x=x, t=t, s=np.full(nt, x[0] - 0.01), w=z, w_x=z, w_xx=z + 1.0, w_xt=z,
        interior=np.ones((nt, nx), bool), valid=np.ones((nt, nx), bool),
        wxx_floor=0.0, params=p, tp=tp, dx=x[1] - x[0], dt=t[1] - t[0], v=v,
    )


def test_level_curves_constant_field_is_empty():
    assert trace_level_curves(_toy_field(np.full((20, 30), 2.0)), [2.0]) == []


def test_level_curve_of_time_field_is_horizontal():
    nt, nx = 41, 30
    t = np.linspace(0.0, 0.02, nt)
    fld = _toy_field(np.tile(t[:, None], (1, nx)))
    curves = trace_level_curves(fld, [0.01], jobs=2)
    assert len(curves) == 1
    pts = curves[0].points
    np.testing.assert_allclose(pts[:, 1], 0.01, atol=1e-12)
    assert curves[0].t_monotone
    assert curves[0].as_dict()["alpha"] == 0.01


def test_level_curves_on_solved_field():
    fld, _ = field_for(0.06, 0.03, 401)
    vals = fld.v[fld.valid]
    curves = trace_level_curves(fld, np.percentile(vals, [25, 50, 75]))
    assert curves and all(c.points.shape[1] == 2 for c in curves)


def test_diagnose_pipeline(standard_surface):
    fld, rep = diagnose(standard_surface)
    assert fld.v is not None and fld.s_prime is not None
    assert set(rep.max_residuals()) == {"w", "w_x", "w_xx", "v", "sign", "L_wxx"}
    assert rep.t_window[0] == pytest.approx(0.1 * fld.t[-1])
    with pytest.raises(InputError):
        boundary_identity_report(fld, t_min_frac=1.01)
