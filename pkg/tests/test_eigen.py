"""Tests for generalized eigenvalue estimates and bound transfer."""

import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from app.eigen import (
    PolynomialSubspaceSpec,
    bound_from_discrete,
    constrained_basis,
    constraint_rows,
    discrete_constant,
    gram_matrix,
    max_gen_eig,
    monomial_exponents,
    poly_subspace_constant,
    triangle_moments,
    upper_bound,
)
from app.geometry import TABLE_SHAPES, TriangleShape
from app.mesh import assemble
from app.schemas import ConsistencyError, SpaceKind

# Published bounds rounded up to seven decimals, rows in TABLE_SHAPES order
TABLE_UPPER_10 = {
    1: [0.3212289, 0.2740806, 0.2648395, 0.2635352, 0.2911751, 0.2436089,
        0.2329771, 0.2310302, 0.2408093, 0.2271431, 0.2150884, 0.2124694],
    2: [0.2396038, 0.1998408, 0.1916920, 0.1906411, 0.2177021, 0.1782024,
        0.1720157, 0.1711857, 0.1906371, 0.1694255, 0.1645692, 0.1638829],
    3: [0.1684445, 0.1180689, 0.1096648, 0.1087203, 0.1464850, 0.0946780,
        0.0849795, 0.0837110, 0.1177043, 0.0842223, 0.0727067, 0.0710650],
    4: [0.4894003, 0.3813624, 0.3372741, 0.3286113, 0.3969773, 0.3262145,
        0.5391173, 0.9749195, 0.3189929, 0.3460583, 0.6631990, 1.2689186],
}
TABLE_UPPER_20 = {
    1: [0.3190362, 0.2723722, 0.2632357, 0.2619417, 0.2892957, 0.2420929,
        0.2312898, 0.2292243, 0.2392497, 0.2255926, 0.2129925, 0.2100806],
    2: [0.2381772, 0.1985657, 0.1904436, 0.1893971, 0.2164123, 0.1770818,
        0.1709010, 0.1700506, 0.1895418, 0.1684167, 0.1635627, 0.1628606],
    3: [0.1675538, 0.1175454, 0.1092457, 0.1083185, 0.1458511, 0.0942615,
        0.0844706, 0.0831604, 0.1172419, 0.0837769, 0.0719785, 0.0702397],
    4: [0.4888905, 0.3809003, 0.3367581, 0.3280651, 0.3964682, 0.3257825,
        0.5389130, 0.9748213, 0.3185476, 0.3456978, 0.6630530, 1.2688509],
}
TABLE_POLY = {
    1: [0.3183099, 0.2718063, 0.2627046, 0.2614141, 0.2886729, 0.2415907,
        0.2307191, 0.2285776, 0.2387324, 0.2250791, 0.2122504, 0.2091369],
    2: [0.2377024, 0.1981417, 0.1900287, 0.1889838, 0.2159829, 0.1767091,
        0.1705285, 0.1696650, 0.1891769, 0.1680810, 0.1632275, 0.1625185],
    3: [0.1672535, 0.1173697, 0.1091055, 0.1081842, 0.1456392, 0.0941222,
        0.0842822, 0.0829349, 0.1170871, 0.0836268, 0.0716838, 0.0698653],
    4: [0.4887224, 0.3807481, 0.3365882, 0.3278853, 0.3963006, 0.3256403,
        0.5388449, 0.9747887, 0.3184012, 0.3455789, 0.6630039, 1.2688285],
}


def assert_rounded_up(computed: float, printed: float) -> None:
    """Printed values are rounded up, so they bound the computed ones from above."""
    assert computed <= printed + 1e-8
    assert printed - computed <= 1e-5


def random_spd(rng: np.random.Generator, size: int) -> np.ndarray:
    factor = rng.standard_normal((size, size))
    return factor @ factor.T + size * np.eye(size)


def random_sym(rng: np.random.Generator, size: int) -> np.ndarray:
    matrix = rng.standard_normal((size, size))
    return (matrix + matrix.T) / 2


@pytest.fixture
def right_isosceles():
    return TriangleShape(Fraction(0), Fraction(1))


def test_max_gen_eig_trivial_pencils():
    """Test A = B and diagonal pencils."""
    spd = random_spd(np.random.default_rng(1), 5)
    assert max_gen_eig(spd, spd).value == pytest.approx(1.0, rel=1e-12)
    estimate = max_gen_eig(np.diag([1.0, 2.0]), np.eye(2))
    assert estimate.value == pytest.approx(2.0)
    assert estimate.residual < 1e-12
    assert estimate.constant == pytest.approx(math.sqrt(2.0))


def test_max_gen_eig_errors():
    """Test shape mismatch, unknown methods and indefinite denominators."""
    with pytest.raises(ValueError):
        max_gen_eig(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        max_gen_eig(np.eye(2), np.eye(2), method="qr")
    with pytest.raises(ConsistencyError):
        max_gen_eig(np.eye(2), np.diag([1.0, -1.0]))


@pytest.mark.parametrize("size", [3, 10, 50, 200])
def test_solver_paths_agree(size):
    """Test the dense and Lanczos paths on random pencils."""
    rng = np.random.default_rng(size)
    a, b = random_sym(rng, size), random_spd(rng, size)
    dense = max_gen_eig(a, b, "cholesky")
    lanczos = max_gen_eig(a, b, "lanczos")
    assert lanczos.value == pytest.approx(dense.value, rel=1e-9)
    assert dense.residual < 1e-8 * max(1.0, abs(dense.value)) * np.linalg.norm(b)
    assert lanczos.iterations > 0


def test_solver_paths_agree_on_pencil(right_isosceles):
    """Test both paths on assembled pencils."""
    for space, j in ((SpaceKind.V11, 1), (SpaceKind.V12, 2), (SpaceKind.V2, 3), (SpaceKind.V2, 4)):
        pencil = assemble(space, j, 3, right_isosceles)
        dense = max_gen_eig(pencil.A, pencil.B, "cholesky")
        lanczos = max_gen_eig(pencil.A, pencil.B, "lanczos")
        assert lanczos.value == pytest.approx(dense.value, rel=1e-9)


def test_bound_from_discrete_formulas():
    """Test the bound transfer factors."""
    assert bound_from_discrete(1, 10, 0.3) == pytest.approx(0.3 * math.sqrt(100 / 99))
    assert bound_from_discrete(2, 20, 0.2) == pytest.approx(0.2 * math.sqrt(400 / 399))
    assert bound_from_discrete(3, 20, 0.1) == pytest.approx(0.1 * math.sqrt(160000 / 159999))
    assert bound_from_discrete(4, 10, 0.4, 0.25) == pytest.approx(math.sqrt(0.16 + 0.0625 / 100))


def test_bound_from_discrete_errors():
    """Test missing C_2 bounds and invalid arguments."""
    with pytest.raises(ValueError):
        bound_from_discrete(4, 10, 0.4)
    with pytest.raises(ValueError):
        bound_from_discrete(1, 1, 0.4)
    with pytest.raises(ValueError):
        bound_from_discrete(5, 10, 0.4)


def test_discrete_constant_decreases_with_refinement(right_isosceles):
    """Test that the bound tightens from n=2 to n=4."""
    coarse = bound_from_discrete(1, 2, discrete_constant(1, 2, right_isosceles))
    fine = bound_from_discrete(1, 4, discrete_constant(1, 4, right_isosceles))
    assert fine < coarse
    assert fine > 1 / math.pi


def test_published_bound_n10_right_isosceles(right_isosceles):
    """Test the n=10 bounds on T_{0,1} against the published tables."""
    assert_rounded_up(upper_bound(1, 10, right_isosceles), TABLE_UPPER_10[1][0])
    assert_rounded_up(upper_bound(4, 10, right_isosceles), TABLE_UPPER_10[4][0])


@pytest.mark.slow
@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_published_bounds_n10(j):
    """Test every n=10 bound against the published tables."""
    for row, printed in zip(TABLE_SHAPES, TABLE_UPPER_10[j]):
        computed = upper_bound(j, 10, row.shape)
        assert computed <= printed + 1e-8, row.label
        assert printed - computed <= 1e-5, row.label


@pytest.mark.slow
def test_published_bound_n20_thin_isosceles():
    """Test the n=20 bound of C_4 on T_{1/2,1/10}."""
    shape = TABLE_SHAPES[-1].shape
    assert_rounded_up(upper_bound(4, 20, shape), TABLE_UPPER_20[4][-1])


@pytest.mark.slow
@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_refinement_is_monotone(j):
    """Test C-bar^(20) <= C-bar^(10) on all table shapes."""
    for row in TABLE_SHAPES:
        assert upper_bound(j, 20, row.shape) <= upper_bound(j, 10, row.shape) + 1e-9, row.label


def test_polynomial_spec_validation():
    """Test degree and space checks of the polynomial estimate."""
    with pytest.raises(ValueError):
        PolynomialSubspaceSpec(degree=1)
    assert PolynomialSubspaceSpec(degree=10).size == 66
    with pytest.raises(ValueError):
        poly_subspace_constant(3, TriangleShape(Fraction(0), Fraction(1)), PolynomialSubspaceSpec(4, SpaceKind.V11))


def test_triangle_moments(right_isosceles):
    """Test monomial moments against direct formulas."""
    moments = triangle_moments(right_isosceles, 4)
    assert moments[(0, 0)] == Fraction(1, 2)
    assert moments[(1, 0)] == Fraction(1, 6)
    assert moments[(2, 1)] == Fraction(1, 60)
    sheared = triangle_moments(TriangleShape(Fraction(1, 2), Fraction(1, 2)), 1)
    # centroid of (0,0), (1,0), (1/2,1/2)
    assert sheared[(1, 0)] / sheared[(0, 0)] == Fraction(1, 2)
    assert sheared[(0, 1)] / sheared[(0, 0)] == Fraction(1, 6)


def test_constraint_spaces(right_isosceles):
    """Test the constrained bases kill their functionals exactly."""
    exponents = monomial_exponents(3)
    moments = triangle_moments(right_isosceles, 6)
    for space, count in ((SpaceKind.V11, 1), (SpaceKind.V12, 3), (SpaceKind.V2, 3)):
        rows = constraint_rows(space, right_isosceles, exponents, moments)
        basis = constrained_basis(rows)
        assert basis.shape == (10, 10 - count)
        product = np.array(rows, dtype=object).dot(basis)
        assert all(value == 0 for value in product.flat)
    with pytest.raises(ConsistencyError):
        constrained_basis([[Fraction(1), Fraction(2)], [Fraction(2), Fraction(4)]])


def test_gram_matrices(right_isosceles):
    """Test Gram entries for low-degree monomials."""
    exponents = monomial_exponents(2)
    moments = triangle_moments(right_isosceles, 4)
    l2 = gram_matrix(exponents, moments, 0)
    h1 = gram_matrix(exponents, moments, 1)
    h2 = gram_matrix(exponents, moments, 2)
    x, x2, xy = exponents.index((1, 0)), exponents.index((2, 0)), exponents.index((1, 1))
    assert l2[0, 0] == Fraction(1, 2)
    assert h1[x, x] == Fraction(1, 2)
    assert h1[0, 0] == 0
    assert h2[x2, x2] == 4 * Fraction(1, 2)
    assert h2[xy, xy] == 2 * Fraction(1, 2)
    assert h2[x, x] == 0


def test_poly_subspace_right_isosceles(right_isosceles):
    """Test the degree-10 estimate of C_1 on T_{0,1} against 1/pi."""
    value = poly_subspace_constant(1, right_isosceles)
    assert_rounded_up(value, TABLE_POLY[1][0])
    assert value <= 1 / math.pi + 1e-9


def test_poly_subspace_low_degree_is_lower(right_isosceles):
    """Test that degree 2 gives a smaller value than degree 10."""
    low = poly_subspace_constant(3, right_isosceles, PolynomialSubspaceSpec(2, SpaceKind.V2))
    assert 0 < low <= TABLE_POLY[3][0] + 1e-9


@pytest.mark.parametrize("j", [1, 2, 3])
def test_poly_subspace_monotone_in_height(j):
    """Test that shrinking the height does not increase the estimate."""
    spec = PolynomialSubspaceSpec(5, {1: SpaceKind.V11, 2: SpaceKind.V12, 3: SpaceKind.V2}[j])
    for a, b in ((Fraction(0), Fraction(1)), (Fraction(1, 4), Fraction(1, 2))):
        base = poly_subspace_constant(j, TriangleShape(a, b), spec)
        for eta in (Fraction(1, 2), Fraction(9, 10)):
            assert poly_subspace_constant(j, TriangleShape(a, eta * b), spec) <= base + 1e-8


@pytest.mark.slow
@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_poly_subspace_published(j):
    """Test every degree-10 estimate against the published tables."""
    for row, printed in zip(TABLE_SHAPES, TABLE_POLY[j]):
        computed = poly_subspace_constant(j, row.shape)
        assert computed <= printed + 1e-8, row.label
        assert printed - computed <= 1e-5, row.label


@pytest.mark.slow
@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_lower_estimates_below_upper_bounds(j):
    """Test C-tilde <= C-bar^(10) on all table shapes."""
    for row in TABLE_SHAPES:
        assert poly_subspace_constant(j, row.shape) <= upper_bound(j, 10, row.shape) + 1e-9, row.label
