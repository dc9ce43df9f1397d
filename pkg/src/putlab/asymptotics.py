"""Leading-order near-expiry expansion of the put exercise boundary.

For ``0 <= q < r``::

    X(tau) ~ K - sigma K sqrt(tau log(sigma^2 / (8 pi (r - q)^2 tau)))

and for ``q = r > 0``::

    X(tau) ~ K - sigma K sqrt(tau log(1 / (4 sqrt(pi) q tau)))

with ``tau`` the calendar time to expiry.  No expansion is given for ``r < q``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryCurve, Source
from .errors import DomainError, InputError, UnsupportedBranchError
from .market import MarketParams


class Branch(enum.Enum):
    SUB_DIVIDEND = "SUB_DIVIDEND"
    EQUAL = "EQUAL"


@dataclass(frozen=True)
class AsymptoticSpec:
    branch: Branch
    params: MarketParams
    validity_tau_max: float

    @property
    def log_constant(self) -> float:
        """``c`` in ``log(c / tau)``; the validity edge is ``tau = c``."""
        return self.validity_tau_max


def asymptotic_spec(params: MarketParams) -> AsymptoticSpec:
    r, q, sigma = params.r, params.q, params.sigma
    if math.isclose(r, q, rel_tol=1e-12, abs_tol=0.0):
        if q <= 0.0:
            raise UnsupportedBranchError("the q = r branch needs q > 0")
        return AsymptoticSpec(Branch.EQUAL, params, 1.0 / (4.0 * math.sqrt(math.pi) * q))
    if r < q:
        raise UnsupportedBranchError(f"no near-expiry expansion for r < q (r={r}, q={q})")
    c = sigma**2 / (8.0 * math.pi * (r - q) ** 2)
    return AsymptoticSpec(Branch.SUB_DIVIDEND, params, c)


def evans_boundary(spec: AsymptoticSpec, tau):
    """Expansion value at time-to-expiry ``tau``; scalar or array input.

    ``tau`` must lie in ``(0, validity_tau_max]`` where the logarithm is at
    least 1.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(~(tau_arr > 0.0)) or np.any(tau_arr > spec.validity_tau_max):
        raise DomainError(
            f"tau must lie in (0, {spec.validity_tau_max:.6g}] for this expansion"
        )
    K, sigma = spec.params.strike, spec.params.sigma
    out = K - sigma * K * np.sqrt(tau_arr * np.log(spec.log_constant / tau_arr))
    return float(out) if out.ndim == 0 else out


def evans_curve(spec: AsymptoticSpec, tau: np.ndarray) -> BoundaryCurve:
    """Expansion sampled at the given times-to-expiry, as a boundary curve."""
    tau = np.sort(np.asarray(tau, dtype=float))
    X = evans_boundary(spec, tau)
    p = spec.params
    return BoundaryCurve(t=0.5 * p.sigma**2 * tau, s=np.log(X), params=p, source=Source.ASYMPTOTIC)


@dataclass
class ErrorProfile:
    tau: np.ndarray
    X_evans: np.ndarray
    X_extracted: np.ndarray
    rel_gap: np.ndarray

    @property
    def max_gap(self) -> float:
        return float(self.rel_gap.max())

    @property
    def mean_gap(self) -> float:
        return float(self.rel_gap.mean())

    @property
    def trend(self) -> float:
        """Least-squares slope of ``rel_gap`` against ``log tau``.

        Positive means the gap shrinks as ``tau -> 0``.
        """
        if self.tau.size < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.tau), self.rel_gap, 1)[0])

    def as_dict(self) -> dict:
        return {
            "samples": int(self.tau.size),
            "max_gap": self.max_gap,
            "mean_gap": self.mean_gap,
            "trend": self.trend,
        }


def compare_near_expiry(
    curve: BoundaryCurve,
    spec: AsymptoticSpec,
    window: tuple[float, float],
) -> ErrorProfile:
    """Gap ``|X - X_evans| / (K - X_evans)`` at curve samples with ``tau`` in ``window``."""
    lo, hi = float(window[0]), float(window[1])
    if not 0.0 < lo <= hi:
        raise InputError(f"window must satisfy 0 < lo <= hi, got {window}")
    if hi > spec.validity_tau_max:
        raise DomainError(f"window reaches past the validity edge tau={spec.validity_tau_max:.6g}")
    tau = curve.tau
    # relative slack absorbs the round trip through transformed time
    sel = (tau >= lo * (1.0 - 1e-12)) & (tau <= hi * (1.0 + 1e-12))
    if not sel.any():
        raise InputError("curve has no samples inside the window")
    order = np.argsort(tau[sel])
    tau = tau[sel][order]
    X = curve.X[sel][order]
    Xe = np.atleast_1d(evans_boundary(spec, np.minimum(tau, spec.validity_tau_max)))
    return ErrorProfile(tau, Xe, X, np.abs(X - Xe) / (spec.params.strike - Xe))
