import functools

import pytest

from putlab.market import MarketParams, transform
from putlab.pde import build_grid, solve_lcp

STANDARD = MarketParams(r=0.06, q=0.03, sigma=0.2, strike=100.0, expiry=1.0)


@functools.lru_cache(maxsize=16)
def solved(r, q, sigma, nx, nt, strike=100.0, expiry=1.0, scheme="bs", horizon=None):
    """Cached solve; surfaces are immutable so sharing them across tests is safe."""
    p = MarketParams(r, q, sigma, strike, expiry)
    grid = build_grid(transform(p), p, nx, nt, horizon=horizon)
    return solve_lcp(p, grid, scheme=scheme)


@pytest.fixture(scope="session")
def standard():
    return STANDARD


@pytest.fixture(scope="session")
def standard_surface():
    return solved(0.06, 0.03, 0.2, 801, 800)[0]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
