"""Finite-difference solver for the transformed American put problem.

The value ``u(x, t)`` solves ``u_t = u_xx + (k - h - 1) u_x - k u`` where it
exceeds the payoff ``psi(x) = max(0, K - e^x)`` and equals the payoff in the
exercise region.  Each time level is a tridiagonal linear complementarity
problem produced by a theta scheme on a uniform grid.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import GridError, IterationLimitError, NumericalError, ParameterError
from .market import MarketParams, TransformedParams, boundary_at_expiry, transform

log = logging.getLogger(__name__)

DEFAULT_OMEGA = 1.5
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
RANNACHER_HALF_STEPS = 4


class Scheme(enum.Enum):
    PSOR = "psor"
    BRENNAN_SCHWARTZ = "bs"


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    nx: int
    nt: int
    t_max: float
    dx: float = field(init=False)
    dt: float = field(init=False)

    def __post_init__(self) -> None:
        if self.nx < 3 or self.nt < 2:
            raise GridError(f"need nx >= 3 and nt >= 2, got nx={self.nx}, nt={self.nt}")
        if not (self.x_max > self.x_min) or not self.t_max > 0.0:
            raise GridError("grid extents are degenerate")
        object.__setattr__(self, "dx", (self.x_max - self.x_min) / (self.nx - 1))
        object.__setattr__(self, "dt", self.t_max / (self.nt - 1))

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.nt)


class Tridiagonal(NamedTuple):
    """Row-aligned bands; ``lower[0]`` and ``upper[-1]`` are never read."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def dot(self, u: np.ndarray) -> np.ndarray:
        out = self.diag * u
        out[1:] += self.lower[1:] * u[:-1]
        out[:-1] += self.upper[:-1] * u[1:]
        return out

    def dense(self) -> np.ndarray:
        n = self.diag.size
        a = np.diag(self.diag)
        a[np.arange(1, n), np.arange(n - 1)] = self.lower[1:]
        a[np.arange(n - 1), np.arange(1, n)] = self.upper[:-1]
        return a


@dataclass
class SolveReport:
    scheme: str
    iterations: np.ndarray
    max_complementarity_residual: float
    max_scheme_residual: float
    max_pde_residual: float = float("nan")
    runtime: float = 0.0
    warnings: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "total_iterations": int(np.sum(self.iterations)),
            "max_iterations_per_level": int(np.max(self.iterations, initial=0)),
            "max_complementarity_residual": self.max_complementarity_residual,
            "max_scheme_residual": self.max_scheme_residual,
            "max_pde_residual": self.max_pde_residual,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class PriceSurface:
    """Solved values ``u[n, i]`` at time level ``n`` and log-price node ``i``."""

    grid: Grid
    u: np.ndarray
    active: np.ndarray
    obstacle: np.ndarray
    params: MarketParams
    theta: float
    tol: float
    act_tol: float
    scheme: Scheme

    @property
    def tp(self) -> TransformedParams:
        return transform(self.params)

    def value_at(self, S: float, T: float = 0.0) -> float:
        """Bilinear interpolation in (log S, t); zero beyond the far-field edge."""
        g = self.grid
        tp = self.tp
        t = float(tp.transformed_time(T))
        if not -1e-12 <= t <= g.t_max + 1e-12:
            raise ParameterError(f"T={T} is outside the solved horizon")
        if S <= 0.0:
            return self.params.strike
        x = math.log(S)
        if x >= g.x_max:
            log.warning("spot %.6g lies above the grid; far-field value 0 used", S)
            return 0.0
        if x <= g.x_min:
            return float(max(0.0, self.params.strike - S))
        fi = (x - g.x_min) / g.dx
        fn = min(max(t / g.dt, 0.0), g.nt - 1.0)
        i = min(int(fi), g.nx - 2)
        n = min(int(fn), g.nt - 2)
        ax, at = fi - i, fn - n
        u = self.u
        return float(
            (1 - at) * ((1 - ax) * u[n, i] + ax * u[n, i + 1])
            + at * ((1 - ax) * u[n + 1, i] + ax * u[n + 1, i + 1])
        )


def build_grid(
    tp: TransformedParams,
    params: MarketParams,
    nx: int,
    nt: int,
    horizon: float | None = None,
) -> Grid:
    """Uniform grid centred on ``log K`` with half-width ``max(5 sigma sqrt(T_F), 3)``.

    ``horizon`` truncates the time axis to that many years before expiry;
    the early part of the solution does not depend on what comes later.
    """
    half = max(5.0 * params.sigma * math.sqrt(params.expiry), 3.0)
    if horizon is None:
        t_max = tp.t_max
    else:
        if not 0.0 < horizon <= params.expiry:
            raise GridError(f"horizon must lie in (0, {params.expiry}], got {horizon}")
        t_max = 0.5 * params.sigma**2 * horizon
    grid = Grid(x_min=tp.d - half, x_max=tp.d + half, nx=int(nx), nt=int(nt), t_max=t_max)
    x_cap = math.log(boundary_at_expiry(params))
    if not grid.x_min < x_cap <= tp.d < grid.x_max:
        raise GridError("grid does not bracket log K and the expiry boundary")
    return grid


def operator_bands(tp: TransformedParams, dx: float) -> tuple[float, float, float]:
    """Constant stencil weights (left, centre, right) of the discrete operator."""
    beta = tp.drift
    return (1.0 / dx**2 - beta / (2.0 * dx), -2.0 / dx**2 - tp.k, 1.0 / dx**2 + beta / (2.0 * dx))


def apply_operator_L0(u_row: np.ndarray, tp: TransformedParams, grid: Grid) -> np.ndarray:
    """Apply ``d2/dx2 + (k-h-1) d/dx - k`` at interior nodes; ends are NaN."""
    u_row = np.asarray(u_row, dtype=float)
    if u_row.shape[-1] != grid.nx:
        raise GridError(f"row has {u_row.shape[-1]} entries, grid has {grid.nx}")
    lo, di, up = operator_bands(tp, grid.dx)
    out = np.full(u_row.shape, np.nan)
    out[..., 1:-1] = lo * u_row[..., :-2] + di * u_row[..., 1:-1] + up * u_row[..., 2:]
    return out


def psor_sweep(
    matrix: Tridiagonal,
    rhs: np.ndarray,
    obstacle: np.ndarray,
    omega: float = DEFAULT_OMEGA,
    u_guess: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, int]:
    if not 0.0 < omega < 2.0:
        raise ParameterError(f"omega must lie in (0, 2), got {omega}")
    lower, diag, upper = (np.ascontiguousarray(b, dtype=float) for b in matrix)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    psi = np.ascontiguousarray(obstacle, dtype=float)
    u = np.maximum(psi, rhs / diag if u_guess is None else np.asarray(u_guess, dtype=float))
    it, status = _kernels.psor(lower, diag, upper, rhs, psi, float(omega), u, float(tol), int(max_iter))
    if status != _kernels.OK:
        raise IterationLimitError(f"PSOR did not reach tol={tol} within {max_iter} sweeps")
    return u, it


def brennan_schwartz_sweep(
    matrix: Tridiagonal,
    rhs: np.ndarray,
    obstacle: np.ndarray,
    direction: str = "down",
) -> np.ndarray:
    """Direct LCP solve for a one-sided exercise region.

    ``direction="down"`` eliminates from the high-price end toward the low
    end (put); ``"up"`` is the mirror image.
    """
    if direction not in ("down", "up"):
        raise ParameterError(f"direction must be 'down' or 'up', got {direction!r}")
    lower, diag, upper = (np.ascontiguousarray(b, dtype=float) for b in matrix)
    out = np.empty_like(diag)
    status = _kernels.brennan_schwartz(
        lower,
        diag,
        upper,
        np.ascontiguousarray(rhs, dtype=float),
        np.ascontiguousarray(obstacle, dtype=float),
        direction == "down",
        out,
    )
    if status != _kernels.OK:
        raise NumericalError("zero pivot in Brennan-Schwartz elimination")
    return out


def _step_bands(n: int, tp: TransformedParams, dx: float, theta: float, dt: float) -> Tridiagonal:
    lo, di, up = operator_bands(tp, dx)
    c = theta * dt
    return Tridiagonal(np.full(n, -c * lo), np.full(n, 1.0 - c * di), np.full(n, -c * up))


def solve_lcp(
    params: MarketParams,
    grid: Grid,
    scheme: Scheme | str = Scheme.BRENNAN_SCHWARTZ,
    theta: float = 0.5,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    omega: float = DEFAULT_OMEGA,
    rannacher_half_steps: int = RANNACHER_HALF_STEPS,
    american: bool = True,
) -> tuple[PriceSurface, SolveReport]:
    """March the theta scheme from expiry, solving one LCP per time level.

    With ``theta < 1`` the first ``rannacher_half_steps`` half-steps are
    fully implicit to damp the payoff kink.  PSOR is run to ``tol / 10`` on
    the update so that the scaled scheme residual lands below ``tol``.
    ``american=False`` drops the obstacle after the initial row, giving the
    European put on the same discretization.
    """
    scheme = Scheme(scheme)
    if not 0.0 <= theta <= 1.0:
        raise ParameterError(f"theta must lie in [0, 1], got {theta}")
    if not tol > 0.0:
        raise ParameterError(f"tol must be > 0, got {tol}")
    if rannacher_half_steps % 2 or rannacher_half_steps < 0:
        raise ParameterError("rannacher_half_steps must be a non-negative even number")
    started = time.perf_counter()
    tp = transform(params)
    K = params.strike
    x = grid.x
    nx, nt, dx, dt = grid.nx, grid.nt, grid.dx, grid.dt
    psi = np.maximum(0.0, K - np.exp(x))
    act_tol = 10.0 * tol
    warnings: list[str] = []
    if theta < 0.5 and (1.0 - 2.0 * theta) * dt / dx**2 > 0.5:
        msg = f"theta={theta} with dt/dx^2={dt / dx**2:.3g} is outside the explicit stability bound"
        log.warning(msg)
        warnings.append(msg)

    u = np.empty((nt, nx))
    u[0] = psi
    left = K - math.exp(grid.x_min)
    lo, di, up = operator_bands(tp, dx)
    n_int = nx - 2
    psi_int = psi[1:-1] if american else np.full(nx - 2, -np.inf)
    iterations = np.zeros(nt, dtype=np.int64)
    max_comp = 0.0
    max_res = 0.0

    def advance(prev: np.ndarray, th: float, h: float, level: int) -> np.ndarray:
        nonlocal max_comp, max_res
        A = _step_bands(n_int, tp, dx, th, h)
        Lprev = lo * prev[:-2] + di * prev[1:-1] + up * prev[2:]
        rhs = prev[1:-1] + (1.0 - th) * h * Lprev
        rhs[0] += th * h * lo * left
        # right Dirichlet value is zero, nothing to add
        if scheme is Scheme.PSOR:
            lower, diag, upper = A
            v = np.maximum(psi_int, prev[1:-1])
            it, status = _kernels.psor(lower, diag, upper, rhs, psi_int, omega, v, 0.1 * tol, max_iter)
            iterations[level] += it
            if status != _kernels.OK:
                report = SolveReport(scheme.value, iterations.copy(), max_comp, max_res,
                                     runtime=time.perf_counter() - started, warnings=warnings)
                raise IterationLimitError(
                    f"PSOR hit max_iter={max_iter} at time level {level}", report
                )
        else:
            v = brennan_schwartz_sweep(A, rhs, psi_int, "down")
            iterations[level] += 1
        full = np.empty(nx)
        full[0], full[-1], full[1:-1] = left, 0.0, v
        # scheme residual in value units: (A v - rhs) / diag
        resid = (A.dot(v) - rhs) / A.diag
        gap = v - psi_int
        comp = np.abs(np.minimum(gap, resid))
        max_comp = max(max_comp, float(comp.max(initial=0.0)))
        inactive = gap > tol
        if inactive.any():
            max_res = max(max_res, float(np.abs(resid[inactive]).max()))
        return full

    n_rannacher = rannacher_half_steps // 2 if theta < 1.0 else 0
    for n in range(1, nt):
        if n <= n_rannacher:
            half = advance(u[n - 1], 1.0, 0.5 * dt, n)
            u[n] = advance(half, 1.0, 0.5 * dt, n)
        else:
            u[n] = advance(u[n - 1], theta, dt, n)

    active = (u - psi[None, :]) <= act_tol
    if not american:
        active[:] = False
    surface = PriceSurface(
        grid=grid,
        u=u,
        active=active,
        obstacle=psi,
        params=params,
        theta=theta,
        tol=tol,
        act_tol=act_tol,
        scheme=scheme,
    )
    report = SolveReport(
        scheme=scheme.value,
        iterations=iterations,
        max_complementarity_residual=max_comp,
        max_scheme_residual=max_res,
        warnings=warnings,
    )
    report.max_pde_residual = residual_report(surface, tp).max_pde_residual
    report.runtime = time.perf_counter() - started
    return surface, report


def residual_report(
    surface: PriceSurface,
    tp: TransformedParams | None = None,
    t_skip_frac: float = 0.05,
    margin: int = 2,
) -> SolveReport:
    """Consistency of a solved surface with ``u_t = L0 u`` on the continuation set.

    The PDE residual is ``|(u^n - u^{n-1})/dt - L0 u^n|`` at nodes at least
    ``margin`` cells clear of the active set on both levels.  Levels with
    ``t < t_skip_frac * t_max`` are left out: the payoff kink makes early
    time derivatives grid-dependent.  The complementarity column is the
    largest ``|min(u - psi, ...)|`` with the implicit-Euler residual.
    """
    if tp is None:
        tp = surface.tp
    g = surface.grid
    u, psi = surface.u, surface.obstacle
    lo, di, up = operator_bands(tp, g.dx)
    t_cut = t_skip_frac * g.t_max
    first = max(int(np.searchsorted(g.t, t_cut)), 1)
    pde = 0.0
    comp = 0.0
    # blocks of levels keep the temporaries small on fine grids
    chunk = max(1, 4_000_000 // g.nx)
    for n0 in range(first, g.nt, chunk):
        n1 = min(n0 + chunk, g.nt)
        cur = u[n0:n1]
        Lu = lo * cur[:, :-2] + di * cur[:, 1:-1] + up * cur[:, 2:]
        resid = (cur[:, 1:-1] - u[n0 - 1:n1 - 1, 1:-1]) / g.dt - Lu
        gap = cur[:, 1:-1] - psi[None, 1:-1]

        # distance-from-active mask, widened by `margin` cells and across both levels
        act = surface.active[n0 - 1:n1].copy()
        act[:, 0] = act[:, -1] = True
        blocked = act.copy()
        for s in range(1, margin + 1):
            blocked[:, s:] |= act[:, :-s]
            blocked[:, :-s] |= act[:, s:]
        ok = ~(blocked[1:] | blocked[:-1])[:, 1:-1]
        if ok.any():
            pde = max(pde, float(np.abs(resid[ok]).max()))
        scaled = resid / (1.0 / g.dt - di)
        comp = max(comp, float(np.abs(np.minimum(gap, scaled)).max(initial=0.0)))
    return SolveReport(
        scheme=surface.scheme.value,
        iterations=np.zeros(0, dtype=np.int64),
        max_complementarity_residual=comp,
        max_scheme_residual=float("nan"),
        max_pde_residual=pde,
    )


@dataclass
class InvariantReport:
    """Largest violation of each structural property; all should be ``<= tol``.

    ``european`` compares with the European put solved on the same grid and
    scheme, so discretization error cancels.  ``european_closed_form`` is
    the gap to the exact formula and is informational: it carries the
    scheme's own error near the payoff kink.
    """

    obstacle: float
    monotone_x: float
    european: float
    delta: float
    monotone_t: float
    tol: float
    european_closed_form: float = float("nan")

    checks = ("obstacle", "monotone_x", "european", "delta", "monotone_t")

    @property
    def passed(self) -> dict:
        return {name: getattr(self, name) <= self.tol for name in self.checks}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> dict:
        out = {name: getattr(self, name) for name in self.checks}
        out.update(tol=self.tol, european_closed_form=self.european_closed_form, ok=self.ok)
        return out


def invariant_report(surface: PriceSurface, tol: float | None = None) -> InvariantReport:
    """Obstacle dominance, ``u`` falling in ``x``, ``u >= European``, ``u_x >= -e^x``, ``u`` rising in ``t``.

    ``tol`` defaults to ``10 * act_tol``.  Each entry is the largest signed
    violation over the surface, so a negative or zero value is a clean pass.
    """
    from .market import european_put

    g = surface.grid
    u, psi = surface.u, surface.obstacle
    if tol is None:
        tol = 10.0 * surface.act_tol
    ex = np.exp(g.x)
    obstacle = float(np.max(psi[None, :] - u))
    monotone_x = float(np.max(np.diff(u, axis=1)))
    # u + e^x must not fall: the discrete form of u_x >= -e^x
    delta = float(np.max(-np.diff(u + ex[None, :], axis=1)))
    monotone_t = float(np.max(u[:-1] - u[1:]))
    euro, _ = solve_lcp(
        surface.params, g, scheme=surface.scheme, theta=surface.theta, tol=surface.tol, american=False
    )
    european = float(np.max(euro.u - u))
    del euro
    T = np.asarray(surface.tp.calendar_time(g.t))
    closed = -np.inf
    for n in range(1, g.nt):
        gap = european_put(surface.params, ex[1:-1], T[n]) - u[n, 1:-1]
        closed = max(closed, float(gap.max()))
    return InvariantReport(obstacle, monotone_x, european, delta, monotone_t, tol, closed)
