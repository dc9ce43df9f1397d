"""Cox-Ross-Rubinstein lattice: independent price and boundary oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .market import MarketParams


@dataclass(frozen=True)
class TreeSpec:
    steps: int
    dt: float
    up: float
    down: float
    p: float
    discount: float

    @property
    def log_spacing(self) -> float:
        """Log-price gap between neighbouring nodes on the same level."""
        return 2.0 * math.log(self.up)


def tree_spec(params: MarketParams, steps: int) -> TreeSpec:
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    dt = params.expiry / steps
    up = math.exp(params.sigma * math.sqrt(dt))
    down = 1.0 / up
    p = (math.exp((params.r - params.q) * dt) - down) / (up - down)
    if not 0.0 < p < 1.0:
        raise ParameterError(
            f"risk-neutral probability {p:.6g} outside (0, 1) at N={steps}; use more steps"
        )
    return TreeSpec(steps, dt, up, down, p, math.exp(-params.r * dt))


def _level_prices(S0: float, spec: TreeSpec, j: int) -> np.ndarray:
    # node i on level j has i down moves: S0 * up**(j - 2 i)
    return S0 * spec.up ** (j - 2.0 * np.arange(j + 1))


def crr_price(params: MarketParams, S0: float, steps: int, american: bool = True) -> float:
    """Root value by backward induction; ``american=False`` gives the European lattice value."""
    spec = tree_spec(params, steps)
    K = params.strike
    if S0 <= 0.0:
        return K if american else K * math.exp(-params.r * params.expiry)
    pu = spec.discount * spec.p
    pd = spec.discount * (1.0 - spec.p)
    values = np.maximum(K - _level_prices(S0, spec, steps), 0.0)
    for j in range(steps - 1, -1, -1):
        values = pu * values[:-1] + pd * values[1:]
        if american:
            np.maximum(values, K - _level_prices(S0, spec, j), out=values)
    return float(values[0])


def crr_boundary(params: MarketParams, steps: int, S0: float | None = None):
    """Highest in-the-money node per level where exercising is at least as good as holding.

    Ties count as exercise.  Levels with no such node are dropped.  The
    lattice is centred at ``S0`` (default: the strike).
    """
    from .boundary import BoundaryCurve, Source

    spec = tree_spec(params, steps)
    K = params.strike
    S0 = K if S0 is None else S0
    pu = spec.discount * spec.p
    pd = spec.discount * (1.0 - spec.p)
    values = np.maximum(K - _level_prices(S0, spec, steps), 0.0)
    levels, prices = [], []
    for j in range(steps - 1, -1, -1):
        cont = pu * values[:-1] + pd * values[1:]
        S = _level_prices(S0, spec, j)
        exercise = K - S
        stop = (exercise >= cont) & (exercise > 0.0)
        if stop.any():
            # prices fall with i, so the first stopping index is the highest price
            levels.append(j)
            prices.append(S[np.argmax(stop)])
        values = np.maximum(cont, exercise)
    T = np.asarray(levels, dtype=float) * spec.dt
    X = np.asarray(prices)
    # levels were collected from expiry backward, i.e. increasing transformed time
    t = 0.5 * params.sigma**2 * (params.expiry - T)
    return BoundaryCurve(
        t=t,
        s=np.log(X),
        params=params,
        source=Source.TREE,
        resolution=spec.log_spacing,
        time_step=0.5 * params.sigma**2 * spec.dt,
    )
