"""Tests for outward-rounded intervals and the SPD certificate."""

import random
import sys
from decimal import Decimal, localcontext
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import eigh

sys.path.append(str(Path(__file__).resolve().parents[1]))

from app.eigen import max_gen_eig
from app.geometry import TriangleShape
from app.interval import (
    Interval,
    IntervalSymMatrix,
    certify_eigen_bound,
    interval_ops,
    midpoint_shift_spd,
    rational_to_interval,
    verified_spd,
)
from app.mesh import assemble
from app.schemas import IntervalError, SpaceKind

EXACT_OPS = {
    "add": lambda p, q: p + q,
    "sub": lambda p, q: p - q,
    "mul": lambda p, q: p * q,
    "div": lambda p, q: p / q,
}


def random_rational(rng: random.Random) -> Fraction:
    return Fraction(rng.randint(-10**6, 10**6), rng.randint(1, 10**6))


def check_enclosures(count: int, seed: int) -> int:
    rng = random.Random(seed)
    violations = 0
    for _ in range(count):
        p, q = random_rational(rng), random_rational(rng)
        x, y = rational_to_interval(p), rational_to_interval(q)
        for kind, exact in EXACT_OPS.items():
            if kind == "div" and q == 0:
                continue
            if not interval_ops(x, y, kind).contains(exact(p, q)):
                violations += 1
        root = interval_ops(rational_to_interval(abs(p)), None, "sqrt")
        if not (Fraction(root.lo) ** 2 <= abs(p) <= Fraction(root.hi) ** 2):
            violations += 1
    return violations


def householder(v):
    """Exactly orthogonal rational reflector I - 2 v v^T / v^T v."""
    v = np.array([Fraction(x) for x in v], dtype=object)
    n = len(v)
    norm2 = v.dot(v)
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for k in range(n):
            out[i, k] = Fraction(int(i == k)) - 2 * v[i] * v[k] / norm2
    return out


def synthesize(eigenvalues, v):
    """Exact symmetric matrix H diag(eigenvalues) H with known spectrum."""
    h = householder(v)
    n = len(eigenvalues)
    diag = np.empty((n, n), dtype=object)
    diag.fill(Fraction(0))
    for i, value in enumerate(eigenvalues):
        diag[i, i] = Fraction(value)
    return h.dot(diag).dot(h)


def widened(matrix, radius: float) -> IntervalSymMatrix:
    base = IntervalSymMatrix.from_rational(matrix)
    return IntervalSymMatrix(
        np.nextafter(base.lo - radius, -np.inf), np.nextafter(base.hi + radius, np.inf)
    )


def check_never_wrong(count: int, seed: int) -> None:
    rng = random.Random(seed)
    for _ in range(count):
        n = rng.randint(2, 8)
        v = [rng.randint(-5, 5) for _ in range(n)]
        if not any(v):
            v[0] = 1
        smallest = Fraction(rng.randint(-20, 20), rng.randint(1, 50))
        eigenvalues = [smallest] + [smallest + Fraction(rng.randint(0, 100), 10) for _ in range(n - 1)]
        rng.shuffle(eigenvalues)
        matrix = synthesize(eigenvalues, v)
        radius = rng.choice([0.0, 1e-12, 1e-6, 1e-3])
        if smallest <= 0:
            # the exact matrix is a member and is not positive definite
            assert not verified_spd(widened(matrix, radius))


@pytest.fixture
def small_pencil():
    return assemble(SpaceKind.V11, 1, 2, TriangleShape(Fraction(1, 4), Fraction(1, 2)))


def test_point_addition_is_widened():
    """Test [1,1] + [2,2] encloses 3 within one ulp per side."""
    result = interval_ops(Interval(1, 1), Interval(2, 2), "add")
    assert result.lo <= 3 <= result.hi
    assert result.lo >= np.nextafter(3.0, -np.inf)
    assert result.hi <= np.nextafter(3.0, np.inf)


def test_product_of_symmetric_intervals():
    """Test [-1,1] * [-1,1] contains [-1,1]."""
    result = Interval(-1, 1) * Interval(-1, 1)
    assert result.lo <= -1 and result.hi >= 1


def test_reciprocal_of_three():
    """Test 1/[3,3] strictly encloses 1/3."""
    result = interval_ops(Interval(1, 1), Interval(3, 3), "div")
    assert result.contains(Fraction(1, 3))
    assert Fraction(result.lo) < Fraction(1, 3) < Fraction(result.hi)


def test_operator_errors():
    """Test division by zero-containing intervals and bad square roots."""
    with pytest.raises(IntervalError):
        interval_ops(Interval(1, 2), Interval(-1, 1), "div")
    with pytest.raises(IntervalError):
        interval_ops(Interval(-1, 2), None, "sqrt")
    with pytest.raises(IntervalError):
        interval_ops(Interval(1, 2), Interval(1, 2), "pow")
    with pytest.raises(IntervalError):
        Interval(2, 1)


def test_mixed_operands():
    """Test arithmetic between intervals and exact numbers."""
    result = Fraction(1, 3) + Interval(1, 1) * 2
    assert result.contains(Fraction(7, 3))
    assert (-Interval(1, 2)).lo == -2


def test_rational_to_interval_exact_and_tight():
    """Test exact conversion of dyadics and one-ulp enclosures otherwise."""
    half = rational_to_interval(Fraction(1, 2))
    assert half.lo == half.hi == 0.5
    third = rational_to_interval(Fraction(1, 3))
    assert Fraction(third.lo) < Fraction(1, 3) < Fraction(third.hi)
    assert np.nextafter(third.lo, np.inf) == third.hi


def test_rational_to_interval_against_decimal():
    """Test the enclosure of 25/224 against a long decimal expansion."""
    enclosure = rational_to_interval(Fraction(25, 224))
    with localcontext() as ctx:
        ctx.prec = 80
        exact = Decimal(25) / Decimal(224)
        assert Decimal(enclosure.lo) < exact < Decimal(enclosure.hi)


def test_rational_to_interval_overflow():
    """Test that huge rationals get an unbounded upper end."""
    result = rational_to_interval(Fraction(10**400))
    assert result.hi == np.inf
    assert result.lo == np.finfo(float).max
    assert rational_to_interval(Fraction(-(10**400))).lo == -np.inf


def test_enclosure_soundness():
    """Test exact membership of op results for random rational pairs."""
    assert check_enclosures(2000, seed=11) == 0


@pytest.mark.slow
def test_enclosure_soundness_full():
    """Test exact membership of op results for 10^5 random rational pairs."""
    assert check_enclosures(100_000, seed=12) == 0


def test_verified_spd_small_cases():
    """Test the certificate on identity, indefinite and widened matrices."""
    assert verified_spd(IntervalSymMatrix.from_rational(np.eye(3)))
    indefinite = np.array([[1, 2], [2, 1]], dtype=object)
    assert not verified_spd(IntervalSymMatrix.from_rational(indefinite))
    wide = IntervalSymMatrix.from_midrad(np.array([[2.0, 1.0], [1.0, 2.0]]), 0.5)
    assert not verified_spd(wide)
    narrow = IntervalSymMatrix.from_midrad(np.array([[2.0, 1.0], [1.0, 2.0]]), 0.1)
    assert verified_spd(narrow)


def test_verified_spd_rejects_singular():
    """Test that a positive semidefinite but singular matrix is not certified."""
    singular = np.array([[1, 1], [1, 1]], dtype=object)
    assert not verified_spd(IntervalSymMatrix.from_rational(singular))


def test_interval_matrix_validation():
    """Test rejection of non-symmetric and empty interval matrices."""
    with pytest.raises(ValueError):
        IntervalSymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(IntervalError):
        IntervalSymMatrix(np.eye(2), np.zeros((2, 2)))


def test_interval_matrix_contains():
    """Test exact membership for enclosed rational matrices."""
    matrix = synthesize([Fraction(1, 3), Fraction(2, 7), Fraction(5)], [1, 2, -1])
    enclosure = IntervalSymMatrix.from_rational(matrix)
    assert enclosure.contains(matrix)
    assert not enclosure.contains(matrix + Fraction(1, 10))


def test_verified_spd_monotone_in_shift():
    """Test that certified matrices stay certified after a diagonal shift."""
    rng = random.Random(13)
    for _ in range(50):
        n = rng.randint(2, 7)
        v = [rng.randint(-4, 4) or 1 for _ in range(n)]
        eigenvalues = [Fraction(rng.randint(1, 40), 4) for _ in range(n)]
        enclosure = IntervalSymMatrix.from_rational(synthesize(eigenvalues, v))
        assert verified_spd(enclosure)
        for delta in (0.0, 1e-8, 0.5, 10.0):
            assert verified_spd(enclosure.shifted_diagonal(delta))


def test_verified_spd_never_wrong():
    """Test that matrices with a nonpositive eigenvalue are never certified."""
    check_never_wrong(100, seed=14)


@pytest.mark.slow
def test_verified_spd_never_wrong_full():
    """Test the never-wrong property on 10^3 synthesized matrices."""
    check_never_wrong(1000, seed=15)


def test_certify_eigen_bound(small_pencil):
    """Test the certificate just above and below the float eigenvalue."""
    top = float(eigh(small_pencil.A.to_float(), small_pencil.B.to_float(), eigvals_only=True)[-1])
    assert certify_eigen_bound(small_pencil, Fraction(top) * Fraction(101, 100))
    assert not certify_eigen_bound(small_pencil, Fraction(top) * Fraction(99, 100))
    assert certify_eigen_bound(small_pencil, 10**6)


def test_certify_eigen_bound_monotone(small_pencil):
    """Test that certification persists as lambda grows."""
    top = float(eigh(small_pencil.A.to_float(), small_pencil.B.to_float(), eigvals_only=True)[-1])
    results = [
        certify_eigen_bound(small_pencil, Fraction(top) * factor)
        for factor in (Fraction(101, 100), Fraction(105, 100), Fraction(6, 5), Fraction(2), Fraction(50))
    ]
    assert all(results)


def tridiagonal(n: int, shift: float) -> np.ndarray:
    return (2.0 + shift) * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)


def test_midpoint_shift_large_well_conditioned():
    """Test the shifted float Cholesky certifies a thin order-400 enclosure."""
    enclosure = IntervalSymMatrix.from_midrad(tridiagonal(400, 0.01), 1e-14)
    assert midpoint_shift_spd(enclosure)
    assert verified_spd(enclosure)


def test_midpoint_shift_respects_radius():
    """Test a radius larger than the smallest eigenvalue is never certified."""
    assert not midpoint_shift_spd(IntervalSymMatrix.from_midrad(np.eye(3), 1.0))
    assert not midpoint_shift_spd(IntervalSymMatrix.from_midrad(tridiagonal(50, 0.0), 0.05))
    indefinite = np.array([[1, 2], [2, 1]], dtype=object)
    assert not midpoint_shift_spd(IntervalSymMatrix.from_rational(indefinite))


def test_midpoint_shift_never_wrong():
    """Test the fast path alone never certifies a matrix with a nonpositive eigenvalue."""
    rng = random.Random(16)
    for _ in range(100):
        n = rng.randint(2, 8)
        v = [rng.randint(-5, 5) or 1 for _ in range(n)]
        smallest = Fraction(rng.randint(-20, 0), rng.randint(1, 50))
        eigenvalues = [smallest] + [smallest + Fraction(rng.randint(0, 100), 10) for _ in range(n - 1)]
        assert not midpoint_shift_spd(IntervalSymMatrix.from_rational(synthesize(eigenvalues, v)))


def test_verified_spd_nan_is_not_certified():
    """Test a Cholesky update producing NaN returns False instead of raising."""
    lo = np.full((3, 3), np.inf)
    np.fill_diagonal(lo, 1.0)
    assert not verified_spd(IntervalSymMatrix(lo, lo.copy()))


@pytest.mark.slow
def test_certify_eigen_bound_reference_order():
    """Test the certificate at order 20, where the pencil has dimension 1029."""
    pencil = assemble(SpaceKind.V11, 1, 20, TriangleShape(Fraction(0), Fraction(1)))
    assert pencil.A.order == 1029
    top = max_gen_eig(pencil.A, pencil.B).value
    shifted = pencil.B.shifted(Fraction(top) * Fraction(11, 10), pencil.A)
    assert midpoint_shift_spd(IntervalSymMatrix.from_rational(shifted))
    assert certify_eigen_bound(pencil, Fraction(top) * Fraction(11, 10))
