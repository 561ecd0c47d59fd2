"""Outward-rounded interval arithmetic and a verified SPD certificate.

Bounds are binary64 floats. Every operation is evaluated in round-to-nearest
and then widened by one ulp on each side with ``numpy.nextafter``, which
encloses the exact result since a correctly rounded operation is off by at
most half an ulp. No global floating-point state is touched, so intervals
are safe to use from any thread or worker process.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from app.schemas import IntervalError
from app.symbolic import SymRatMatrix, to_fraction

logger = logging.getLogger(__name__)

INF = float("inf")
# unit roundoff and smallest subnormal of binary64
UNIT_ROUNDOFF = 2.0 ** -53
SMALLEST_SUBNORMAL = 2.0 ** -1074
OPS = ("add", "sub", "mul", "div", "sqrt")


def _down(value: float) -> float:
    return float(np.nextafter(value, -INF))


def _up(value: float) -> float:
    return float(np.nextafter(value, INF))


def _exact(value: Any) -> Fraction:
    if isinstance(value, (float, np.floating)):
        return Fraction(float(value))
    if isinstance(value, str):
        return Fraction(value)
    return to_fraction(value)


def _check_bounds(lo: float, hi: float) -> None:
    if math.isnan(lo) or math.isnan(hi):
        raise IntervalError("Interval bound is NaN")
    if lo > hi:
        raise IntervalError(f"Empty interval [{lo!r}, {hi!r}]")


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] with float bounds."""

    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        _check_bounds(self.lo, self.hi)

    @classmethod
    def point(cls, value: Any) -> "Interval":
        return rational_to_interval(_exact(value))

    @property
    def width(self) -> float:
        return _up(self.hi - self.lo)

    @property
    def mid(self) -> float:
        return self.lo + (self.hi - self.lo) / 2

    def contains(self, value: Any) -> bool:
        """Exact membership test for a rational value."""
        q = _exact(value)
        if math.isinf(self.lo) and self.lo < 0:
            lower_ok = True
        else:
            lower_ok = Fraction(self.lo) <= q
        if math.isinf(self.hi) and self.hi > 0:
            upper_ok = True
        else:
            upper_ok = q <= Fraction(self.hi)
        return lower_ok and upper_ok

    def _other(self, other: Any) -> "Interval":
        if isinstance(other, Interval):
            return other
        return rational_to_interval(_exact(other))

    def __add__(self, other):
        return interval_ops(self, self._other(other), "add")

    def __radd__(self, other):
        return interval_ops(self._other(other), self, "add")

    def __sub__(self, other):
        return interval_ops(self, self._other(other), "sub")

    def __rsub__(self, other):
        return interval_ops(self._other(other), self, "sub")

    def __mul__(self, other):
        return interval_ops(self, self._other(other), "mul")

    def __rmul__(self, other):
        return interval_ops(self._other(other), self, "mul")

    def __truediv__(self, other):
        return interval_ops(self, self._other(other), "div")

    def __rtruediv__(self, other):
        return interval_ops(self._other(other), self, "div")

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def sqrt(self) -> "Interval":
        return interval_ops(self, None, "sqrt")

    def __repr__(self) -> str:
        return f"Interval({self.lo!r}, {self.hi!r})"


def interval_ops(x: Interval, y: Optional[Interval], kind: str) -> Interval:
    """Apply an arithmetic operation with outward rounding.

    Args:
        x: Left operand.
        y: Right operand, ignored for ``sqrt``.
        kind: One of ``add``, ``sub``, ``mul``, ``div``, ``sqrt``.

    Returns:
        An interval enclosing {x o y : x in [x], y in [y]}.

    Raises:
        IntervalError: Division by an interval containing zero, square
            root of an interval reaching below zero, or an unknown kind.
    """
    if kind == "sqrt":
        if x.lo < 0:
            raise IntervalError(f"sqrt of negative-reaching interval {x}")
        return Interval(max(0.0, _down(math.sqrt(x.lo))), _up(math.sqrt(x.hi)))
    if y is None:
        raise IntervalError(f"Operation '{kind}' needs two operands")
    if kind == "add":
        return Interval(_down(x.lo + y.lo), _up(x.hi + y.hi))
    if kind == "sub":
        return Interval(_down(x.lo - y.hi), _up(x.hi - y.lo))
    if kind == "mul":
        products = (x.lo * y.lo, x.lo * y.hi, x.hi * y.lo, x.hi * y.hi)
        if any(math.isnan(p) for p in products):
            raise IntervalError(f"Undefined product {x} * {y}")
        return Interval(_down(min(products)), _up(max(products)))
    if kind == "div":
        if y.lo <= 0.0 <= y.hi:
            raise IntervalError(f"Division by interval containing zero: {y}")
        quotients = (x.lo / y.lo, x.lo / y.hi, x.hi / y.lo, x.hi / y.hi)
        return Interval(_down(min(quotients)), _up(max(quotients)))
    raise IntervalError(f"Unknown interval operation '{kind}', expected one of {OPS}")


def _float_bounds(q: Fraction) -> Tuple[float, float]:
    try:
        nearest = float(q)
    except OverflowError:
        logger.warning(f"Rational {q} overflows binary64, enclosure is unbounded")
        big = float(np.finfo(float).max)
        return (big, INF) if q > 0 else (-INF, -big)
    num, den = nearest.as_integer_ratio()
    # compare nearest with q exactly by cross-multiplication
    diff = num * q.denominator - q.numerator * den
    if diff == 0:
        return nearest, nearest
    if diff < 0:
        return nearest, _up(nearest)
    return _down(nearest), nearest


def rational_to_interval(q: Union[Fraction, int, str]) -> Interval:
    """Tightest float enclosure of a rational number.

    Example:
        >>> rational_to_interval(Fraction(1, 2))
        Interval(0.5, 0.5)
    """
    lo, hi = _float_bounds(_exact(q))
    return Interval(lo, hi)


@dataclass(frozen=True)
class IntervalSymMatrix:
    """Symmetric interval matrix stored as two dense float arrays."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float)
        hi = np.array(self.hi, dtype=float)
        if lo.ndim != 2 or lo.shape[0] != lo.shape[1] or lo.shape != hi.shape:
            raise ValueError(f"Expected square bound arrays, got {lo.shape} and {hi.shape}")
        if np.isnan(lo).any() or np.isnan(hi).any() or (lo > hi).any():
            raise IntervalError("Interval matrix has empty or NaN entries")
        if not (np.array_equal(lo, lo.T) and np.array_equal(hi, hi.T)):
            raise ValueError("Interval matrix is not symmetric")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def order(self) -> int:
        return self.lo.shape[0]

    @classmethod
    def from_rational(cls, matrix: Union[SymRatMatrix, np.ndarray]) -> "IntervalSymMatrix":
        """Enclose an exact symmetric matrix entry by entry."""
        entries = matrix.entries if isinstance(matrix, SymRatMatrix) else np.asarray(matrix, dtype=object)
        n = entries.shape[0]
        lo = np.empty((n, n), dtype=float)
        hi = np.empty((n, n), dtype=float)
        # assembled pencils repeat a handful of values many times
        cache: Dict[Fraction, Tuple[float, float]] = {}
        for i in range(n):
            for k in range(i, n):
                q = _exact(entries[i, k])
                if q not in cache:
                    cache[q] = _float_bounds(q)
                lo[i, k] = lo[k, i] = cache[q][0]
                hi[i, k] = hi[k, i] = cache[q][1]
        return cls(lo, hi)

    @classmethod
    def from_midrad(cls, mid: np.ndarray, rad: Any) -> "IntervalSymMatrix":
        """Enclose [mid - rad, mid + rad] entrywise."""
        mid = np.asarray(mid, dtype=float)
        rad = np.broadcast_to(np.asarray(rad, dtype=float), mid.shape)
        return cls(np.nextafter(mid - rad, -INF), np.nextafter(mid + rad, INF))

    def entry(self, i: int, k: int) -> Interval:
        return Interval(self.lo[i, k], self.hi[i, k])

    def shifted_diagonal(self, delta: float) -> "IntervalSymMatrix":
        """Enclosure of M + delta * I."""
        lo = self.lo.copy()
        hi = self.hi.copy()
        diag = np.arange(self.order)
        lo[diag, diag] = np.nextafter(lo[diag, diag] + delta, -INF)
        hi[diag, diag] = np.nextafter(hi[diag, diag] + delta, INF)
        return IntervalSymMatrix(lo, hi)

    def contains(self, matrix: Any) -> bool:
        """Exact membership test for a rational or float matrix."""
        entries = matrix.entries if isinstance(matrix, SymRatMatrix) else np.asarray(matrix, dtype=object)
        n = self.order
        if entries.shape != (n, n):
            return False
        return all(
            self.entry(i, k).contains(entries[i, k]) for i in range(n) for k in range(n)
        )

    def __repr__(self) -> str:
        return f"IntervalSymMatrix(order={self.order})"


def _interval_square(clo: np.ndarray, chi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    low = np.where(clo > 0, clo * clo, np.where(chi < 0, chi * chi, 0.0))
    high = np.maximum(clo * clo, chi * chi)
    return np.maximum(np.nextafter(low, -INF), 0.0), np.nextafter(high, INF)


def _interval_outer(clo: np.ndarray, chi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ll = np.multiply.outer(clo, clo)
    lh = np.multiply.outer(clo, chi)
    hl = np.multiply.outer(chi, clo)
    hh = np.multiply.outer(chi, chi)
    low = np.minimum(np.minimum(ll, lh), np.minimum(hl, hh))
    high = np.maximum(np.maximum(ll, lh), np.maximum(hl, hh))
    low = np.nextafter(low, -INF)
    high = np.nextafter(high, INF)
    # the diagonal is a square, not a product of independent factors
    diag = np.arange(clo.shape[0])
    low[diag, diag], high[diag, diag] = _interval_square(clo, chi)
    return low, high


def _cholesky_error_coefficient(n: int) -> float:
    """Upper bound of gamma_{n+1} / (1 - gamma_{n+1}) as a float."""
    u = Fraction(1, 2 ** 53)
    gamma = (n + 1) * u / (1 - (n + 1) * u)
    return _float_bounds(gamma / (1 - gamma))[1]


def midpoint_shift_spd(matrix: IntervalSymMatrix) -> bool:
    """Certify positive definiteness by one float Cholesky of a shifted midpoint.

    A floating-point Cholesky factor R of a symmetric M satisfies
    R^T R = M + dM with ||dM||_2 <= gamma_{n+1} / (1 - gamma_{n+1}) tr(M)
    (plus an underflow term). A successful factorization of mid - c I, with c
    covering that bound and the spectral norm of the radius, proves every
    member of the interval matrix positive definite.
    False means the shift ate the margin, not that the matrix is indefinite.
    """
    lo, hi = matrix.lo, matrix.hi
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        return False
    n = matrix.order
    mid = 0.5 * (lo + hi)
    if n == 0 or not np.isfinite(mid).all():
        return False
    rad = np.nextafter(np.maximum(hi - mid, mid - lo), INF)
    diag = np.arange(n)
    mid_diag = mid[diag, diag]

    # row sums bound the spectral norm of the symmetric nonnegative radius
    row_sum = float(rad.sum(axis=1).max())
    rad_norm = _up(row_sum * (1 + 2 * (n + 1) * UNIT_ROUNDOFF))
    trace_plus = _up(math.fsum(np.maximum(mid_diag, 0.0)))
    max_abs_diag = float(np.abs(mid_diag).max())
    underflow = _up(4 * n * (2 * (n + 1) + max_abs_diag) * SMALLEST_SUBNORMAL)

    base = _up(_cholesky_error_coefficient(n) * trace_plus)
    base = _up(base + underflow)
    base = _up(base + rad_norm)
    base = _up(base + _up(UNIT_ROUNDOFF * max_abs_diag))
    # c (1 - u) >= base covers the rounding of mid_ii - c
    shift = _up(base / (1 - UNIT_ROUNDOFF))
    if not math.isfinite(shift):
        return False

    shifted = mid.copy()
    shifted[diag, diag] = mid_diag - shift
    try:
        factor = cholesky(shifted, lower=False, check_finite=False)
    except LinAlgError:
        logger.debug(f"Midpoint-shift Cholesky failed at order {n} with shift {shift:.3e}")
        return False
    if not np.isfinite(factor).all():
        return False
    return True


def _interval_cholesky_spd(matrix: IntervalSymMatrix) -> bool:
    lo = np.array(matrix.lo, dtype=float)
    hi = np.array(matrix.hi, dtype=float)
    n = matrix.order
    for k in range(n):
        pivot_lo, pivot_hi = lo[k, k], hi[k, k]
        if not pivot_lo > 0 or math.isinf(pivot_hi):
            logger.debug(f"Interval Cholesky stopped at pivot {k} with lower bound {pivot_lo!r}")
            return False
        if k + 1 == n:
            break
        root_lo = _down(math.sqrt(pivot_lo))
        root_hi = _up(math.sqrt(pivot_hi))
        if not root_lo > 0:
            return False
        col_lo, col_hi = lo[k + 1:, k], hi[k + 1:, k]
        # root is strictly positive, so the bounds come from two quotients each
        c_lo = np.nextafter(np.minimum(col_lo / root_lo, col_lo / root_hi), -INF)
        c_hi = np.nextafter(np.maximum(col_hi / root_lo, col_hi / root_hi), INF)
        prod_lo, prod_hi = _interval_outer(c_lo, c_hi)
        lo[k + 1:, k + 1:] = np.nextafter(lo[k + 1:, k + 1:] - prod_hi, -INF)
        hi[k + 1:, k + 1:] = np.nextafter(hi[k + 1:, k + 1:] - prod_lo, INF)
        if np.isnan(lo).any() or np.isnan(hi).any():
            logger.warning(f"NaN produced during interval Cholesky at pivot {k}, not certified")
            return False
    return True


def verified_spd(matrix: IntervalSymMatrix) -> bool:
    """Certify that every member of an interval matrix is positive definite.

    The midpoint-shift certificate is tried first. When it fails, a
    right-looking Cholesky decomposition in interval arithmetic decides,
    certifying iff every pivot's lower bound is strictly positive. A False
    result means "not certified", never "certified indefinite".
    """
    if midpoint_shift_spd(matrix):
        return True
    return _interval_cholesky_spd(matrix)


def certify_eigen_bound(pencil: Any, lam: Any) -> bool:
    """Rigorously check sup x^T A x / x^T B x < lam for an assembled pencil.

    The shifted matrix lam*B - A is formed exactly, enclosed entrywise and
    passed to ``verified_spd``.
    """
    lam = _exact(lam)
    shifted = pencil.B.shifted(lam, pencil.A)
    certified = verified_spd(IntervalSymMatrix.from_rational(shifted))
    logger.debug(f"certify_eigen_bound(dim={pencil.A.order}, lambda={float(lam):.10g}) -> {certified}")
    return certified
