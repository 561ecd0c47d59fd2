"""Tests for triangle geometry and the closed-form constants."""

import math
import random
import sys
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from app.geometry import (
    K_DEGREE,
    TABLE_SHAPES,
    ContinuationConstants,
    Triangle,
    TriangleShape,
    canonical_grid,
    circumradius,
    continuation_factor,
    derivative_bound_check,
    edge_data,
    k_constant,
    k_constant_surface,
    l_constant,
    l_limit,
    normalize_shape,
)
from app.schemas import DegenerateTriangleError, InvalidShapeError

# Published K_j columns, rows in TABLE_SHAPES order
TABLE_K = {
    1: [0.3340766, 0.2771024, 0.2681079, 0.2674398, 0.3030136, 0.2459842,
        0.2434617, 0.2420732, 0.2683032, 0.2362278, 0.2350309, 0.2327945],
    2: [0.2417624, 0.2001157, 0.1931750, 0.1926084, 0.2197865, 0.1779313,
        0.1753979, 0.1743206, 0.1948780, 0.1709519, 0.1693066, 0.1676363],
    3: [0.1702673, 0.1184266, 0.1107396, 0.1099925, 0.1487598, 0.0950295,
        0.0855112, 0.0843544, 0.1201798, 0.0851337, 0.0732578, 0.0715701],
    4: [0.4915960, 0.3958114, 0.3697886, 0.3662944, 0.4063827, 0.3393940,
        0.5516444, 0.9871945, 0.3476109, 0.3476109, 0.6761399, 1.2786662],
}


@pytest.fixture
def right_triangle():
    return Triangle.from_points([(0, 0), (1, 0), (0, 1)])


def random_triangle(rng: random.Random) -> Triangle:
    while True:
        points = [(Fraction(rng.randint(-50, 50), rng.randint(1, 20)),
                   Fraction(rng.randint(-50, 50), rng.randint(1, 20))) for _ in range(3)]
        tri = Triangle.from_points(points)
        if not tri.is_degenerate():
            return tri


def test_edge_data_right_triangle(right_triangle):
    """Test edge lengths and area of T_{0,1}."""
    data = edge_data(right_triangle)
    assert (data.A2, data.B2, data.C2, data.S) == (2, 1, 1, Fraction(1, 2))
    assert data.A == pytest.approx(math.sqrt(2))


def test_edge_data_scaling(right_triangle):
    """Test that scaling by 2 doubles lengths and quadruples the area."""
    data = edge_data(right_triangle.scaled(2))
    assert (data.A2, data.B2, data.C2, data.S) == (8, 4, 4, 2)


def test_degenerate_triangle_rejected():
    """Test that collinear vertices raise DegenerateTriangleError."""
    tri = Triangle.from_points([(0, 0), (1, 1), (3, 3)])
    with pytest.raises(DegenerateTriangleError):
        edge_data(tri)
    with pytest.raises(DegenerateTriangleError):
        k_constant(1, tri)


def test_exact_l_values():
    """Test the exact values L_1(0,1) = 25/224 and L_4(0,1) = 29/120."""
    shape = TriangleShape(Fraction(0), Fraction(1))
    assert l_constant(1, shape) == Fraction(25, 224)
    assert l_constant(4, shape) == Fraction(29, 120)
    with pytest.raises(DegenerateTriangleError):
        l_constant(1, TriangleShape(Fraction(1, 4), Fraction(0)))


@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_k_constant_matches_published_tables(j):
    """Test K_j on all twelve table shapes against the published columns."""
    for row, expected in zip(TABLE_SHAPES, TABLE_K[j]):
        tri = Triangle.from_shape(row.shape)
        assert k_constant(j, tri) == pytest.approx(expected, abs=1.5e-7), row.label


def test_scale_covariance():
    """Test K_j(cT) = c K_j(T) for j = 1, 2, 4 and c^2 K_3(T)."""
    rng = random.Random(11)
    for _ in range(50):
        tri = random_triangle(rng)
        c = Fraction(rng.randint(1, 1000), 100)
        for j in range(1, 5):
            factor = float(c) ** K_DEGREE[j]
            assert k_constant(j, tri.scaled(c)) == pytest.approx(factor * k_constant(j, tri), rel=1e-12)


def test_congruence_invariance():
    """Test invariance under relabeling, translation, rotation and reflection."""
    rng = random.Random(12)
    for _ in range(30):
        tri = random_triangle(rng)
        (x1, y1), (x2, y2), (x3, y3) = tri.vertices
        variants = [
            Triangle(tri.p2, tri.p3, tri.p1),
            Triangle(tri.p3, tri.p2, tri.p1),
            Triangle((x1 + 3, y1 - 7), (x2 + 3, y2 - 7), (x3 + 3, y3 - 7)),
            Triangle((-y1, x1), (-y2, x2), (-y3, x3)),
            Triangle((-x1, y1), (-x2, y2), (-x3, y3)),
        ]
        for j in range(1, 5):
            reference = k_constant(j, tri)
            for variant in variants:
                assert k_constant(j, variant) == pytest.approx(reference, rel=1e-12)


def test_circumradius():
    """Test R(T) on the right and equilateral triangles."""
    assert circumradius(Triangle.from_points([(0, 0), (1, 0), (0, 1)])) == pytest.approx(math.sqrt(2) / 2)
    equilateral = Triangle.from_points([(0, 0), (1, 0), (0.5, math.sqrt(3) / 2)])
    assert equilateral.converted
    assert circumradius(equilateral) == pytest.approx(1 / math.sqrt(3), rel=1e-9)


def test_k4_below_circumradius_on_thin_triangle():
    """Test K_4 < R(T) on T_{1/2,1/10}."""
    tri = Triangle.from_shape(TriangleShape(Fraction(1, 2), Fraction(1, 10)))
    assert k_constant(4, tri) == pytest.approx(1.2786662, abs=1.5e-7)
    assert k_constant(4, tri) < circumradius(tri)


def test_k4_below_circumradius_random_sample():
    """Test K_4(T) < R(T) on random rational triangles."""
    rng = random.Random(13)
    for _ in range(2000):
        tri = random_triangle(rng)
        assert k_constant(4, tri) < circumradius(tri)


@pytest.mark.slow
def test_k4_below_circumradius_large_sample():
    """Test K_4(T) < R(T) on ten thousand random triangles."""
    rng = random.Random(14)
    for _ in range(10000):
        tri = random_triangle(rng)
        assert k_constant(4, tri) < circumradius(tri)


def test_l_limit_values():
    """Test the b -> 0 limits at a = 0."""
    assert l_limit(1, 0) == Fraction(1, 14)
    assert l_limit(3, 0) == Fraction(1, 83)
    with pytest.raises(InvalidShapeError):
        l_limit(4, 0)
    with pytest.raises(InvalidShapeError):
        l_limit(1, Fraction(3, 2))


def test_l_limit_approached_from_above():
    """Test that L_j(a, b) approaches the limit as b shrinks."""
    for j in (1, 2, 3):
        limit = l_limit(j, Fraction(1, 4))
        value = l_constant(j, TriangleShape(Fraction(1, 4), Fraction(1, 10 ** 6)))
        assert value > limit
        assert float(value - limit) < 1e-9


def test_l_limit_strictly_below_on_grid():
    """Test l_limit(j, a) < L_j(a, b) exactly on a rational grid."""
    for j in (1, 2, 3):
        for i in range(0, 21):
            a = Fraction(i, 40)
            limit = l_limit(j, a)
            for k in range(1, 21):
                assert limit < l_constant(j, TriangleShape(a, Fraction(k, 20)))


@pytest.mark.slow
def test_l_limit_strictly_below_on_fine_grid():
    """Test l_limit(j, a) < L_j(a, b) on a 100 x 100 grid."""
    for j in (1, 2, 3):
        for a, b in canonical_grid(100):
            assert l_limit(j, a) < l_constant(j, TriangleShape(a, b))


def test_continuation_factor():
    """Test the factor families on both axes."""
    assert continuation_factor(1, "a", Fraction(1, 50)) == Fraction(501, 500)
    assert continuation_factor(3, "b", Fraction(1, 50)) == 1 + Fraction(8, 2500)
    assert continuation_factor(4, "a", Fraction(1, 100)) == 1 + Fraction(9, 10000)
    with pytest.raises(InvalidShapeError):
        continuation_factor(1, "a", Fraction(1, 49))
    with pytest.raises(InvalidShapeError):
        continuation_factor(1, "a", 0)
    with pytest.raises(InvalidShapeError):
        continuation_factor(1, "c", Fraction(1, 50))


def test_continuation_constants_table():
    """Test the derivative-bound constants per j."""
    assert ContinuationConstants.for_j(1) == ContinuationConstants(2, 5, 2, 4)
    assert ContinuationConstants.for_j(2) == ContinuationConstants(2, 5, 2, 4)
    assert ContinuationConstants.for_j(3) == ContinuationConstants(2, 4, 3, 8)
    assert ContinuationConstants.for_j(4) == ContinuationConstants(3, 9, 3, 9)


@pytest.mark.parametrize("j,a,b", [
    (1, Fraction(1, 4), Fraction(1, 2)),
    (4, Fraction(0), Fraction(1, 10)),
    (3, Fraction(1, 2), Fraction(1)),
])
def test_derivative_bounds_at_points(j, a, b):
    """Test the derivative inequalities at single shapes."""
    report = derivative_bound_check(j, [(a, b)])
    assert report.all_hold
    assert set(report.points[0].margins) == {"La", "Laa", "Lb", "Lbb"}


def test_derivative_bounds_small_grid():
    """Test the derivative inequalities on a 6 x 6 grid for every j."""
    for j in range(1, 5):
        assert derivative_bound_check(j, canonical_grid(6)).all_hold


@pytest.mark.slow
def test_derivative_bounds_fine_grid():
    """Test the derivative inequalities on a 50 x 50 grid."""
    for j in range(1, 5):
        report = derivative_bound_check(j, canonical_grid(50))
        assert report.all_hold, report.violations[:3]


def test_derivative_bounds_reject_outside_region():
    """Test that shapes outside the canonical region are rejected."""
    with pytest.raises(InvalidShapeError):
        derivative_bound_check(1, [(Fraction(3, 4), Fraction(1, 2))])


def test_normalize_shape_examples(right_triangle):
    """Test normalization of literal and scaled triangles."""
    shape, record = normalize_shape(right_triangle)
    assert (shape.a, shape.b) == (0, 1)
    assert record.scale_squared == 1

    shape, record = normalize_shape(Triangle.from_points([(0, 0), (2, 0), (1, 1)]))
    assert (shape.a, shape.b) == (Fraction(1, 2), Fraction(1, 2))
    assert record.scale == pytest.approx(2.0)


def test_normalize_equilateral():
    """Test that an equilateral triangle maps to (1/2, sqrt(3)/2)."""
    tri = Triangle.from_points([(0, 0), (1, 0), (0.5, math.sqrt(3) / 2)])
    shape, record = normalize_shape(tri)
    assert not shape.exact
    assert float(shape.a) == pytest.approx(0.5, abs=1e-9)
    assert float(shape.b) == pytest.approx(math.sqrt(3) / 2, abs=1e-9)


def test_normalize_shape_round_trip():
    """Test L_j(normalized) * scale^(2 d_j) = K_j(T)^2 and the canonical region."""
    rng = random.Random(15)
    for _ in range(50):
        tri = random_triangle(rng)
        shape, record = normalize_shape(tri)
        assert shape.in_canonical_region()
        for j in range(1, 5):
            assert float(l_constant(j, shape) * record.scale_squared ** K_DEGREE[j]) == pytest.approx(
                k_constant(j, tri) ** 2, rel=1e-12
            )


def test_normalize_degenerate():
    """Test that normalization rejects zero-area triangles."""
    with pytest.raises(DegenerateTriangleError):
        normalize_shape(Triangle.from_points([(0, 0), (1, 0), (2, 0)]))


def test_k_constant_surface():
    """Test the sampled K_j surface."""
    df = k_constant_surface(1, 5)
    assert list(df.columns) == ["a", "b", "k", "l"]
    assert len(df) == 25
    assert (df["k"] > 0).all()
