"""Compiled inner loops for tridiagonal linear complementarity problems.

The system is ``lower[i] u[i-1] + diag[i] u[i] + upper[i] u[i+1] = rhs[i]``
with ``lower[0]`` and ``upper[-1]`` ignored.  Status codes are returned
instead of raised so the kernels can run without the GIL.
"""

import numba
import numpy as np

OK = 0
NOT_CONVERGED = 1
PIVOT_BREAKDOWN = 2


@numba.njit(cache=True, nogil=True)
def psor(lower, diag, upper, rhs, psi, omega, u, tol, max_iter):
    """Projected SOR in place on ``u``.  Returns (iterations, status)."""
    n = rhs.shape[0]
    for it in range(1, max_iter + 1):
        err = 0.0
        for i in range(n):
            acc = rhs[i]
            if i > 0:
                acc -= lower[i] * u[i - 1]
            if i < n - 1:
                acc -= upper[i] * u[i + 1]
            gs = acc / diag[i]
            new = u[i] + omega * (gs - u[i])
            if new < psi[i]:
                new = psi[i]
            delta = abs(new - u[i])
            if delta > err:
                err = delta
            u[i] = new
        if err < tol:
            return it, OK
    return max_iter, NOT_CONVERGED


@numba.njit(cache=True, nogil=True)
def brennan_schwartz(lower, diag, upper, rhs, psi, down, out):
    """One elimination pass plus projected substitution, written to ``out``.

    ``down=True`` eliminates the super-diagonal starting from the last row
    and substitutes with projection from the first row upward, which is the
    orientation for an exercise region at the low end (puts).
    """
    n = rhs.shape[0]
    dd = np.empty(n)
    rr = np.empty(n)
    if down:
        dd[n - 1] = diag[n - 1]
        rr[n - 1] = rhs[n - 1]
        for i in range(n - 2, -1, -1):
            if dd[i + 1] == 0.0 or not np.isfinite(dd[i + 1]):
                return PIVOT_BREAKDOWN
            m = upper[i] / dd[i + 1]
            dd[i] = diag[i] - m * lower[i + 1]
            rr[i] = rhs[i] - m * rr[i + 1]
        if dd[0] == 0.0:
            return PIVOT_BREAKDOWN
        out[0] = max(psi[0], rr[0] / dd[0])
        for i in range(1, n):
            if dd[i] == 0.0:
                return PIVOT_BREAKDOWN
            out[i] = max(psi[i], (rr[i] - lower[i] * out[i - 1]) / dd[i])
    else:
        dd[0] = diag[0]
        rr[0] = rhs[0]
        for i in range(1, n):
            if dd[i - 1] == 0.0 or not np.isfinite(dd[i - 1]):
                return PIVOT_BREAKDOWN
            m = lower[i] / dd[i - 1]
            dd[i] = diag[i] - m * upper[i - 1]
            rr[i] = rhs[i] - m * rr[i - 1]
        if dd[n - 1] == 0.0:
            return PIVOT_BREAKDOWN
        out[n - 1] = max(psi[n - 1], rr[n - 1] / dd[n - 1])
        for i in range(n - 2, -1, -1):
            if dd[i] == 0.0:
                return PIVOT_BREAKDOWN
            out[i] = max(psi[i], (rr[i] - upper[i] * out[i + 1]) / dd[i])
    return OK
