"""Contract economics, the log-price/scaled-time transform and regime tags.

Calendar time ``T`` runs from 0 (today) to ``expiry``.  The transformed
problem uses ``x = log S`` and the reversed, scaled time
``t = sigma**2 * (expiry - T) / 2`` so that ``t = 0`` is expiry.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ParameterError


@dataclass(frozen=True)
class MarketParams:
    """American put contract under geometric Brownian motion.

    Rates are continuously compounded per year, ``sigma`` is per square-root
    year and ``expiry`` is measured in years.
    """

    r: float
    q: float
    sigma: float
    strike: float
    expiry: float

    def __post_init__(self) -> None:
        for name in ("r", "q", "sigma", "strike", "expiry"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"{name} must be a finite number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.sigma <= 0.0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.strike <= 0.0:
            raise ParameterError(f"strike must be > 0, got {self.strike}")
        if self.expiry <= 0.0:
            raise ParameterError(f"expiry must be > 0, got {self.expiry}")
        if self.r < 0.0:
            raise ParameterError(f"r must be >= 0, got {self.r}")
        if self.q < 0.0:
            raise ParameterError(f"q must be >= 0, got {self.q}")

    def as_dict(self) -> dict:
        return {
            "r": self.r,
            "q": self.q,
            "sigma": self.sigma,
            "strike": self.strike,
            "expiry": self.expiry,
        }


@dataclass(frozen=True)
class TransformedParams:
    k: float
    h: float
    t_max: float
    d: float
    sigma: float
    expiry: float

    @property
    def drift(self) -> float:
        """Coefficient ``k - h - 1`` of the first derivative in the operator."""
        return self.k - self.h - 1.0

    def calendar_time(self, t):
        """Map transformed time to calendar time ``T = expiry - 2 t / sigma^2``."""
        return self.expiry - 2.0 * np.asarray(t, dtype=float) / self.sigma**2

    def transformed_time(self, T):
        return 0.5 * self.sigma**2 * (self.expiry - np.asarray(T, dtype=float))


class Regime(enum.Enum):
    ZERO_DIVIDEND = "ZERO_DIVIDEND"
    PROVEN_CONVEX = "PROVEN_CONVEX"
    OPEN = "OPEN"
    NON_CONVEX = "NON_CONVEX"

    @property
    def expects_convex(self) -> bool:
        return self in (Regime.ZERO_DIVIDEND, Regime.PROVEN_CONVEX)


def transform(params: MarketParams) -> TransformedParams:
    if not isinstance(params, MarketParams):
        raise ParameterError("transform expects a MarketParams instance")
    s2 = params.sigma**2
    return TransformedParams(
        k=2.0 * params.r / s2,
        h=2.0 * params.q / s2,
        t_max=0.5 * s2 * params.expiry,
        d=math.log(params.strike),
        sigma=params.sigma,
        expiry=params.expiry,
    )


def classify_regime(params: MarketParams) -> Regime:
    """Tag the parameter set by what is known about boundary convexity.

    The edge ``q + sigma^2/2 == r`` counts as proven convex and ``r == q > 0``
    falls in the open band.
    """
    r, q = params.r, params.q
    if q == 0.0:
        return Regime.ZERO_DIVIDEND
    if r < q:
        return Regime.NON_CONVEX
    if q + 0.5 * params.sigma**2 <= r:
        return Regime.PROVEN_CONVEX
    return Regime.OPEN


def payoff(S, K):
    """Put payoff ``max(0, K - S)``; works on scalars and arrays."""
    out = np.maximum(0.0, K - np.asarray(S, dtype=float))
    return float(out) if out.ndim == 0 else out


def boundary_at_expiry(params: MarketParams) -> float:
    """Limit of the exercise boundary as calendar time approaches expiry."""
    if params.q == 0.0 or params.r >= params.q:
        return params.strike
    return params.r / params.q * params.strike


def european_put(params: MarketParams, S, T=0.0):
    """Black-Scholes put with continuous dividend yield at calendar time ``T``."""
    S = np.asarray(S, dtype=float)
    if np.any(S < 0.0):
        raise ParameterError("spot must be >= 0")
    tau = params.expiry - float(T)
    if tau < -1e-14 or T < 0.0:
        raise ParameterError(f"T must lie in [0, {params.expiry}], got {T}")
    K = params.strike
    if tau <= 0.0:
        out = np.maximum(0.0, K - S)
    else:
        vol = params.sigma * math.sqrt(tau)
        disc_r = math.exp(-params.r * tau)
        disc_q = math.exp(-params.q * tau)
        with np.errstate(divide="ignore"):
            d1 = (np.log(S / K) + (params.r - params.q + 0.5 * params.sigma**2) * tau) / vol
        d2 = d1 - vol
        out = K * disc_r * ndtr(-d2) - S * disc_q * ndtr(-d1)
        out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out
