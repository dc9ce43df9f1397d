"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary.

Criteria that do not hold are left failing; the measured numbers are in
the printed line and in the assertion message.
"""

import filecmp
import math
import time

import numpy as np
import pytest

from putlab.asymptotics import asymptotic_spec, compare_near_expiry
from putlab.boundary import Coordinate, convexity_check, extract_boundary, monotonicity_check, smooth_pasting_residual
from putlab.cli import main
from putlab.diagnostics import boundary_identity_report, compute_v_field, compute_w_field
from putlab.market import MarketParams, boundary_at_expiry, transform
from putlab.pde import build_grid, invariant_report, solve_lcp
from putlab.tree import crr_price

pytestmark = pytest.mark.slow

RESULTS: dict[int, tuple[bool, str]] = {}
INVARIANTS: list[tuple[str, object]] = []

FINE = (3201, 3200)
EXPIRY_SETS = [(0.06, 0.03), (0.03, 0.06), (0.05, 0.0)]
CONVEX_SETS = [(0.06, 0.03, 0.2), (0.10, 0.05, 0.3), (0.08, 0.0, 0.4)]
MONOTONE_SETS = CONVEX_SETS + [(0.05, 0.0, 0.2)]
EXPIRY_TOL = 0.005
PRICE_TOL = 0.05
MIN_ORDER = 0.5
# frozen from the refinement study of the near-expiry gap (see README)
ASYMPTOTIC_GAP_MAX = 0.25
DIAGNOSTIC_LADDER = (401, 801, 1601)
PASTING_LADDER = (801, 1601, 3201)


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def solve(r, q, sigma, nx, nt, horizon=None):
    """Solve and log the invariant suite for criterion 8."""
    p = MarketParams(r, q, sigma, 100.0, 1.0)
    grid = build_grid(transform(p), p, nx, nt, horizon=horizon)
    started = time.perf_counter()
    surface, report = solve_lcp(p, grid)
    elapsed = time.perf_counter() - started
    INVARIANTS.append((f"r={r},q={q},sigma={sigma},nx={nx},nt={nt}", invariant_report(surface)))
    return surface, report, elapsed


def orders(values, factor=2.0):
    return [math.log(values[i] / values[i + 1]) / math.log(factor) for i in range(len(values) - 1)]


_fine_cache = {}


def fine(r, q, sigma=0.2):
    key = (r, q, sigma)
    if key not in _fine_cache:
        _fine_cache.clear()  # one fine surface at a time keeps memory flat
        _fine_cache[key] = solve(r, q, sigma, *FINE)
    return _fine_cache[key]


def test_c1_expiry_limit():
    parts, ok = [], True
    for r, q in EXPIRY_SETS:
        surface, _, elapsed = fine(r, q)
        curve = extract_boundary(surface)
        p = surface.params
        target = boundary_at_expiry(p)
        X0 = float(np.exp(curve.s[0]))  # earliest transformed time
        rel = abs(X0 - target) / target
        case_ok = rel <= EXPIRY_TOL and elapsed <= 120.0
        ok &= case_ok
        parts.append(
            f"(r={r},q={q}) X={X0:.4f} vs {target:g} gap {100 * rel:.3f}% {elapsed:.1f}s {'ok' if case_ok else 'X'}"
        )
    record(1, ok, f"expiry limit within {100 * EXPIRY_TOL}% on {FINE[0]}x{FINE[1]}: " + "; ".join(parts))
    assert ok, parts


def test_c2_oracle_agreement():
    parts, ok = [], True
    for r, q in EXPIRY_SETS:
        surface, _, _ = fine(r, q)
        pde = surface.value_at(100.0, 0.0)
        tree = crr_price(surface.params, 100.0, 10000)
        case_ok = abs(pde - tree) <= PRICE_TOL
        ok &= case_ok
        parts.append(f"(r={r},q={q}) pde {pde:.5f} tree {tree:.5f} diff {abs(pde - tree):.2e}")
    record(2, ok, f"PDE vs CRR N=10000 within {PRICE_TOL}: " + "; ".join(parts))
    assert ok, parts


def test_c3_monotonicity():
    parts, ok = [], True
    for r, q, sigma in MONOTONE_SETS:
        surface, _, _ = fine(r, q, sigma)
        rep = monotonicity_check(extract_boundary(surface), mono_tol=surface.grid.dx / 2)
        ok &= rep.monotone
        parts.append(f"(r={r},q={q},s={sigma}) violations {rep.violations}")
    record(3, ok, "zero violations beyond dx/2: " + "; ".join(parts))
    assert ok, parts


def test_c4_convexity():
    parts, ok = [], True
    for r, q, sigma in CONVEX_SETS:
        surface, _, _ = fine(r, q, sigma)
        v = convexity_check(extract_boundary(surface), Coordinate.CALENDAR_X_OF_T)
        ok &= v.convex
        parts.append(
            f"(r={r},q={q},s={sigma}) convex={v.convex} min d2 {v.min_second_difference:.2e} tol {v.tolerance_used:.2e}"
        )
    record(4, ok, "X_f(T) convex at 2dx noise tolerance: " + "; ".join(parts))
    assert ok, parts


def test_c5_smooth_pasting():
    res = []
    for nx in PASTING_LADDER:
        surface, _, _ = solve(0.06, 0.03, 0.2, nx, nx - 1)
        res.append(float(np.max(smooth_pasting_residual(surface, extract_boundary(surface)).derivative)))
        del surface
    ords = orders(res)
    ok = all(o >= MIN_ORDER for o in ords)
    record(
        5, ok,
        "max |u_x + e^s| over nx " + "/".join(map(str, PASTING_LADDER)) + ": "
        + ", ".join(f"{v:.3g}" for v in res) + " orders " + ", ".join(f"{o:.2f}" for o in ords),
    )
    assert ok, (res, ords)


def _asymptotic_profile(r, q):
    # a short horizon with a fine mesh resolves the window tau in [1e-4, 5e-3]
    surface, _, _ = solve(r, q, 0.2, 12801, 2001, horizon=0.006)
    curve = extract_boundary(surface, method="quadratic")
    del surface
    spec = asymptotic_spec(curve.params)
    return compare_near_expiry(curve, spec, (1e-4, 5e-3))


def test_c6_asymptotics():
    parts, ok = [], True
    for label, (r, q) in (("branch q<r", (0.06, 0.03)), ("branch q=r", (0.04, 0.04))):
        prof = _asymptotic_profile(r, q)
        # compare the inner and outer thirds of the window for the trend
        thirds = np.array_split(prof.rel_gap, 3)
        shrinking = prof.trend > 0 and thirds[0].mean() < thirds[-1].mean()
        case_ok = bool(np.all(np.isfinite(prof.rel_gap))) and prof.max_gap <= ASYMPTOTIC_GAP_MAX and shrinking
        ok &= case_ok
        parts.append(
            f"{label} (r={r},q={q}) max gap {prof.max_gap:.3f} near/far {thirds[0].mean():.3f}/{thirds[-1].mean():.3f}"
            f" {'ok' if case_ok else 'X'}"
        )
    record(6, ok, f"near-expiry gap <= {ASYMPTOTIC_GAP_MAX} and shrinking as tau->0: " + "; ".join(parts))
    assert ok, parts


def test_c7_diagnostic_identities():
    keys = ("w", "w_x", "w_xx", "v", "L_wxx")
    maxima = {k: [] for k in keys}
    wxx_ok = True
    for nx in DIAGNOSTIC_LADDER:
        surface, _, _ = solve(0.06, 0.03, 0.2, nx, nx - 1)
        fld = compute_v_field(compute_w_field(surface, curve=extract_boundary(surface, method="quadratic")))
        del surface
        rep = boundary_identity_report(fld)
        for k, v in rep.max_residuals().items():
            if k in maxima:
                maxima[k].append(v)
        if fld.tp.drift >= 0.0:
            wxx_ok &= bool(np.all(fld.w_xx[fld.valid] > 0.0)) and rep.wxx_positive
    ords = {k: orders(v) for k, v in maxima.items()}
    ok = wxx_ok and all(min(o) >= MIN_ORDER for o in ords.values())
    detail = "; ".join(
        f"{k} " + "/".join(f"{v:.3g}" for v in maxima[k]) + " ord " + ",".join(f"{o:.2f}" for o in ords[k])
        for k in keys
    )
    record(7, ok, f"identities over nx {'/'.join(map(str, DIAGNOSTIC_LADDER))}: {detail}; w_xx>0 {wxx_ok}")
    assert ok, (maxima, ords, wxx_ok)


def test_c8_invariants():
    if not INVARIANTS:
        for args in ((0.06, 0.03, 0.2, 801, 800), (0.03, 0.06, 0.2, 801, 800), (0.05, 0.0, 0.2, 801, 800)):
            solve(*args)
    bad = [(name, rep.as_dict()) for name, rep in INVARIANTS if not rep.ok]
    worst = {k: max(getattr(rep, k) for _, rep in INVARIANTS) for k in ("obstacle", "monotone_x", "european", "delta", "monotone_t")}
    ok = not bad
    record(
        8, ok,
        f"{len(INVARIANTS)} surfaces, {len(bad)} failing; worst "
        + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()),
    )
    assert ok, bad


DETERMINISM_RUNS = [
    ["price"],
    ["boundary"],
    ["boundary", "--source", "tree", "--tree-steps", "400"],
    ["convexity"],
    ["sweep", "--r-values", "0.03,0.06", "--q-values", "0,0.03", "--sigma-values", "0.2", "--jobs", "2"],
    ["diagnose", "--refine", "2"],
    ["asymptote", "--horizon", "0.006"],
]


def test_c9_determinism(tmp_path):
    grid = ["--nx", "401", "--nt", "400"]
    mismatched = []
    for i, argv in enumerate(DETERMINISM_RUNS):
        # identical config, including the output path: run, move aside, rerun
        out = tmp_path / f"run{i}"
        first = tmp_path / f"run{i}_first"
        codes = [main([argv[0], *grid, *argv[1:], "--out", str(out)])]
        out.rename(first)
        codes.append(main([argv[0], *grid, *argv[1:], "--out", str(out)]))
        files = sorted(p.name for p in first.iterdir())
        same = codes == [0, 0] and files == sorted(p.name for p in out.iterdir())
        same = same and all(filecmp.cmp(first / f, out / f, shallow=False) for f in files)
        if not same:
            mismatched.append(" ".join(argv))
    ok = not mismatched
    record(9, ok, f"{len(DETERMINISM_RUNS)} CLI runs repeated, byte-identical: {ok}" + (f" ({mismatched})" if mismatched else ""))
    assert ok, mismatched
