"""Special functions, bracketed root finding and small dense complex inversion.

All routines here are pure functions; the rest of the library builds on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

EULER_GAMMA = 0.57721566490153286060651209008240243

# Condition-number cap beyond which a channel matrix is treated as singular.
DEFAULT_COND_CAP = 1e8


class BracketError(ValueError):
    """The supplied interval does not bracket a sign change."""


class ConvergenceError(RuntimeError):
    """An iterative routine exceeded its iteration budget."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Matrix is numerically singular (or past the condition cap)."""


@dataclass(frozen=True)
class Bracket:
    """Search interval [lo, hi] with a width tolerance for the root finder."""

    lo: float
    hi: float
    tolerance: float = 1e-12

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("bracket endpoints must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def exp_integral_e1(z: float) -> float:
    """Exponential integral E1(z) = int_z^inf exp(-t)/t dt for real z > 0.

    Uses the convergent series -gamma - ln z + sum_{n>=1} (-1)^{n+1} z^n / (n n!)
    for z <= 1 and the Lentz continued fraction for z > 1.  Absolute error is
    below 1e-12 over the working range.
    """
    z = float(z)
    if not math.isfinite(z) or z <= 0.0:
        raise ValueError(f"exp_integral_e1 requires finite z > 0, got {z!r}")
    if z <= 1.0:
        total = -EULER_GAMMA - math.log(z)
        term = 1.0
        for n in range(1, 60):
            term *= -z / n
            contrib = -term / n
            total += contrib
            if abs(contrib) < 1e-18 * max(1.0, abs(total)):
                break
        return total
    if z > 700.0:
        # e^-z underflows; the true value is below 1e-306.
        return 0.0
    # Modified Lentz evaluation of the continued fraction
    #   E1(z) = e^-z / (z + 1/(1 + 1/(z + 2/(1 + 2/(z + ...)))))
    tiny = 1e-300
    b = z + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    f = d
    for i in range(1, 200):
        a = -i * i
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        if c == 0.0:
            c = tiny
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-z) * f


def find_root_bracketed(f: Callable[[float], float], bracket: Bracket,
                        max_iters: int = 200) -> float:
    """Bisection root of a continuous f on a sign-changing bracket.

    Returns the midpoint once the interval width drops below the bracket
    tolerance; the result always lies inside the original interval.
    """
    lo, hi = bracket.lo, bracket.hi
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo:.6g}, f(hi)={fhi:.6g}")
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        if hi - lo < bracket.tolerance:
            return mid
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if flo * fmid < 0.0:
            hi = mid
        else:
            lo, flo = mid, fmid
    raise ConvergenceError(
        f"bisection did not reach width {bracket.tolerance:g} in {max_iters} iterations")


def invert_complex_matrix(h: np.ndarray, cond_cap: float = DEFAULT_COND_CAP) -> np.ndarray:
    """Inverse of a square complex matrix via partial-pivot LU (LAPACK getrf/getri).

    Raises SingularMatrixError when the matrix is numerically singular or its
    2-norm condition number exceeds ``cond_cap``.
    """
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("matrix entries must be finite")
    try:
        s = np.linalg.inv(h)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularMatrixError(f"condition number {cond:.3g} exceeds cap {cond_cap:.3g}")
    return s
