"""Triangle geometry and the closed-form constants K_j, L_j.

Triangles carry exact rational coordinates. Floating input is converted to
the nearest rational with denominator at most ``settings.MAX_DENOMINATOR``
and the conversion is recorded on the value, so every derived quantity
(edge lengths squared, area, L_j) stays exact and K_j costs a single final
square root.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import pandas as pd

from app.config import settings
from app.schemas import (
    ConsistencyError,
    DegenerateTriangleError,
    InvalidShapeError,
    ShapeModel,
)
from app.symbolic import RatFn
from app.utils import format_rational, parse_rational

logger = logging.getLogger(__name__)

Number = Union[int, float, str, Fraction]

# Largest admissible continuation step
MAX_CONTINUATION_STEP = Fraction(1, 50)

# Homogeneity degree of K_j in the triangle size
K_DEGREE = {1: 1, 2: 1, 3: 2, 4: 1}


def to_exact(value: Number) -> Tuple[Fraction, bool]:
    """Convert a coordinate to a rational.

    Returns:
        (value, converted) where converted is True for float input
    """
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DegenerateTriangleError(f"Non-finite coordinate {value}")
        exact = Fraction(value).limit_denominator(settings.MAX_DENOMINATOR)
        return exact, True
    return parse_rational(value), False


@dataclass(frozen=True)
class TriangleShape:
    """Normalized shape T_{a,b} with vertices (0,0), (1,0), (a,b)."""

    a: Fraction
    b: Fraction
    exact: bool = True

    @classmethod
    def of(cls, a: Number, b: Number) -> "TriangleShape":
        a_exact, a_conv = to_exact(a)
        b_exact, b_conv = to_exact(b)
        return cls(a_exact, b_exact, exact=not (a_conv or b_conv))

    def in_canonical_region(self) -> bool:
        return 0 <= self.a <= Fraction(1, 2) and 0 < self.b <= 1

    def to_model(self) -> ShapeModel:
        return ShapeModel(
            a=format_rational(self.a),
            b=format_rational(self.b),
            a_float=float(self.a),
            b_float=float(self.b),
            exact=self.exact,
        )


@dataclass(frozen=True)
class Triangle:
    """Triangle with exact rational vertices p1, p2, p3.

    ``converted`` is True if any coordinate was rounded from a float.
    """

    p1: Tuple[Fraction, Fraction]
    p2: Tuple[Fraction, Fraction]
    p3: Tuple[Fraction, Fraction]
    converted: bool = False

    @classmethod
    def from_points(cls, points: Sequence[Sequence[Number]]) -> "Triangle":
        """Build a triangle from three (x, y) pairs of ints, strings, floats or Fractions."""
        if len(points) != 3 or any(len(p) != 2 for p in points):
            raise DegenerateTriangleError("A triangle needs exactly three planar points")
        converted = False
        exact_points = []
        for x, y in points:
            ex, cx = to_exact(x)
            ey, cy = to_exact(y)
            converted = converted or cx or cy
            exact_points.append((ex, ey))
        if converted:
            logger.warning("Floating-point vertices converted to nearest rationals")
        return cls(*exact_points, converted=converted)

    @classmethod
    def from_shape(cls, shape: TriangleShape, h: Number = 1) -> "Triangle":
        """The triangle (0,0), (h,0), (ah,bh)."""
        h_exact, h_conv = to_exact(h)
        zero = Fraction(0)
        return cls(
            (zero, zero),
            (h_exact, zero),
            (shape.a * h_exact, shape.b * h_exact),
            converted=h_conv or not shape.exact,
        )

    @property
    def vertices(self) -> Tuple[Tuple[Fraction, Fraction], ...]:
        return (self.p1, self.p2, self.p3)

    @property
    def signed_area(self) -> Fraction:
        (x1, y1), (x2, y2), (x3, y3) = self.vertices
        return ((x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1)) / 2

    @property
    def area(self) -> Fraction:
        return abs(self.signed_area)

    def is_degenerate(self) -> bool:
        return self.signed_area == 0

    def oriented(self) -> "Triangle":
        """Counter-clockwise relabeling (p2 and p3 swapped if needed)."""
        if self.signed_area < 0:
            return Triangle(self.p1, self.p3, self.p2, converted=self.converted)
        return self

    def scaled(self, factor: Number) -> "Triangle":
        c, conv = to_exact(factor)
        return Triangle(
            *[(x * c, y * c) for x, y in self.vertices],
            converted=self.converted or conv,
        )


@dataclass(frozen=True)
class EdgeData:
    """Squared edge lengths and area; A = |p2p3|, B = |p3p1|, C = |p1p2|."""

    A2: Fraction
    B2: Fraction
    C2: Fraction
    S: Fraction

    @property
    def A(self) -> float:
        return math.sqrt(self.A2)

    @property
    def B(self) -> float:
        return math.sqrt(self.B2)

    @property
    def C(self) -> float:
        return math.sqrt(self.C2)


def _dist2(p: Tuple[Fraction, Fraction], q: Tuple[Fraction, Fraction]) -> Fraction:
    return (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2


def edge_data(tri: Triangle) -> EdgeData:
    """Exact squared edge lengths and area of a triangle.

    Raises:
        DegenerateTriangleError: If the triangle has zero area
    """
    if tri.is_degenerate():
        raise DegenerateTriangleError(f"Degenerate triangle {tri.vertices}")
    return EdgeData(
        A2=_dist2(tri.p2, tri.p3),
        B2=_dist2(tri.p3, tri.p1),
        C2=_dist2(tri.p1, tri.p2),
        S=tri.area,
    )


def radicand(j: int, A2: Any, B2: Any, C2: Any, S: Any) -> Any:
    """K_j(T)^2 in terms of squared edge lengths and area.

    Works over any field type (Fraction, RatFn, jets); only integer
    constants enter the expression.
    """
    S2 = S * S
    if j == 1:
        return (A2 + B2 + C2) / 28 - S2 * S2 / (A2 * B2 * C2)
    if j == 2:
        return (A2 + B2 + C2) / 54 - S2 * S2 / (2 * A2 * B2 * C2)
    if j == 3:
        return (A2 * B2 + B2 * C2 + C2 * A2) / 83 - (A2 * B2 * C2 / (A2 + B2 + C2) + S2) / 24
    if j == 4:
        return (
            A2 * B2 * C2 / (16 * S2)
            - (A2 + B2 + C2) / 30
            - S2 / 5 * (1 / A2 + 1 / B2 + 1 / C2)
        )
    raise InvalidShapeError(f"Constant index must be 1..4, got {j}")


def k_constant(j: int, tri: Triangle) -> float:
    """Closed-form upper bound K_j(T).

    Raises:
        DegenerateTriangleError: For zero-area triangles
        ConsistencyError: If the exact radicand is negative
    """
    data = edge_data(tri)
    value = radicand(j, data.A2, data.B2, data.C2, data.S)
    if value < 0:
        raise ConsistencyError(f"Negative radicand {value} for K_{j} on {tri.vertices}")
    return math.sqrt(value)


def shape_edges(a: Any, b: Any) -> Tuple[Any, Any, Any, Any]:
    """(A^2, B^2, C^2, S) of T_{a,b} in any field type."""
    return (1 - a) ** 2 + b ** 2, a ** 2 + b ** 2, a * 0 + 1, b / 2


def l_expression(j: int, a: Any, b: Any) -> Any:
    """L_j(a, b) = K_j(T_{a,b})^2 evaluated in the field of a and b."""
    return radicand(j, *shape_edges(a, b))


def l_constant(j: int, shape: TriangleShape) -> Fraction:
    """Exact L_j(a, b).

    Raises:
        DegenerateTriangleError: If b <= 0
    """
    if shape.b <= 0:
        raise DegenerateTriangleError(f"Shape height must be positive, got b={shape.b}")
    return l_expression(j, Fraction(shape.a), Fraction(shape.b))


def l_limit(j: int, a: Number) -> Fraction:
    """Exact limit of L_j(a, b) as b decreases to 0.

    Raises:
        InvalidShapeError: For j = 4, or a outside [0, 1]
    """
    a_exact, _ = to_exact(a)
    if not 0 <= a_exact <= 1:
        raise InvalidShapeError(f"a must lie in [0, 1], got {a_exact}")
    d1 = 1 - a_exact
    A2, B2 = d1 ** 2, a_exact ** 2
    if j == 1:
        return (1 + A2 + B2) / 28
    if j == 2:
        return (1 + A2 + B2) / 54
    if j == 3:
        return (A2 * B2 + A2 + B2) / 83 - A2 * B2 / (24 * (1 + A2 + B2))
    if j == 4:
        raise InvalidShapeError("L_4 has no finite limit as b -> 0")
    raise InvalidShapeError(f"Constant index must be 1..4, got {j}")


def circumradius(tri: Triangle) -> float:
    """R(T) = ABC / (4S)."""
    data = edge_data(tri)
    return math.sqrt(data.A2 * data.B2 * data.C2) / (4 * float(data.S))


# Per-j factor coefficients for the a-axis and b-axis continuation steps
_FACTOR_COEFFICIENTS = {
    "a": {1: 5, 2: 5, 3: 6, 4: 9},
    "b": {1: 3, 2: 3, 3: 8, 4: 9},
}


def continuation_factor(j: int, axis: str, h: Number) -> Fraction:
    """1 + c h^2 with the coefficient c of the given axis and constant.

    Raises:
        InvalidShapeError: For h outside (0, 1/50], an unknown axis or j
    """
    h_exact, _ = to_exact(h)
    if not 0 < h_exact <= MAX_CONTINUATION_STEP:
        raise InvalidShapeError(f"Continuation step must satisfy 0 < h <= 1/50, got {h_exact}")
    try:
        coefficient = _FACTOR_COEFFICIENTS[axis][j]
    except KeyError as e:
        raise InvalidShapeError(f"No continuation factor for axis={axis!r}, j={j}") from e
    return 1 + coefficient * h_exact ** 2


@dataclass(frozen=True)
class ContinuationConstants:
    """Bounds on the first and second derivatives of L_j relative to L_j."""

    alpha1: int
    alpha2: int
    beta1: int
    beta2: int

    @classmethod
    def for_j(cls, j: int) -> "ContinuationConstants":
        try:
            return cls(*_CONTINUATION_TABLE[j])
        except KeyError as e:
            raise InvalidShapeError(f"Constant index must be 1..4, got {j}") from e


_CONTINUATION_TABLE = {
    1: (2, 5, 2, 4),
    2: (2, 5, 2, 4),
    3: (2, 4, 3, 8),
    4: (3, 9, 3, 9),
}


@lru_cache(maxsize=None)
def l_derivatives(j: int) -> Dict[str, RatFn]:
    """L_j and its first and second partials as rational functions of a, b."""
    a = RatFn.variable("a", ("a", "b"))
    b = RatFn.variable("b", ("a", "b"))
    L = l_expression(j, a, b)
    logger.debug(f"Differentiating L_{j}")
    return {
        "L": L,
        "La": L.diff("a"),
        "Laa": L.diff("a", 2),
        "Lb": L.diff("b"),
        "Lbb": L.diff("b", 2),
    }


@dataclass
class DerivativeBoundPoint:
    """Margins of the four derivative inequalities at one shape.

    A margin is bound minus derivative; the inequality holds iff it is > 0.
    """

    a: Fraction
    b: Fraction
    margins: Dict[str, Fraction] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return all(m > 0 for m in self.margins.values())


@dataclass
class DerivativeBoundReport:
    j: int
    constants: ContinuationConstants
    points: List[DerivativeBoundPoint] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(p.holds for p in self.points)

    @property
    def violations(self) -> List[DerivativeBoundPoint]:
        return [p for p in self.points if not p.holds]


def _perturbed(value: Fraction, radius: Fraction, lo: Fraction, hi: Fraction, open_lo: bool) -> List[Fraction]:
    samples = []
    for candidate in (value - radius, value, value + radius):
        candidate = min(max(candidate, lo), hi)
        if open_lo and candidate <= lo:
            continue
        if candidate not in samples:
            samples.append(candidate)
    return samples


def derivative_bound_check(j: int, points: Iterable[Tuple[Number, Number]]) -> DerivativeBoundReport:
    """Check the derivative bounds of L_j exactly at each (a, b).

    The second-derivative bounds are evaluated at the shifted abscissae
    a - b/50, a, a + b/50 (clipped to [0, 1/2]) and at the heights
    49b/50, b, 51b/50 (clipped to (0, 1]). Violations are reported, not
    raised.
    """
    constants = ContinuationConstants.for_j(j)
    derivs = l_derivatives(j)
    report = DerivativeBoundReport(j=j, constants=constants)
    half = Fraction(1, 2)
    for a_raw, b_raw in points:
        a, _ = to_exact(a_raw)
        b, _ = to_exact(b_raw)
        shape = TriangleShape(a, b)
        if not shape.in_canonical_region():
            raise InvalidShapeError(f"({a}, {b}) is outside the canonical region")
        at = {"a": a, "b": b}
        L = derivs["L"].evaluate(at)
        radius = b / 50
        laa = max(
            derivs["Laa"].evaluate({"a": a_t, "b": b})
            for a_t in _perturbed(a, radius, Fraction(0), half, open_lo=False)
        )
        lbb = max(
            derivs["Lbb"].evaluate({"a": a, "b": b_t})
            for b_t in _perturbed(b, radius, Fraction(0), Fraction(1), open_lo=True)
        )
        margins = {
            "La": constants.alpha1 * L / b - abs(derivs["La"].evaluate(at)),
            "Laa": constants.alpha2 * L / b ** 2 - laa,
            "Lb": constants.beta1 * L / b - abs(derivs["Lb"].evaluate(at)),
            "Lbb": constants.beta2 * L / b ** 2 - lbb,
        }
        point = DerivativeBoundPoint(a, b, margins)
        if not point.holds:
            logger.error(f"Derivative bound violated for j={j} at (a, b)=({a}, {b}): {margins}")
        report.points.append(point)
    logger.info(
        f"Derivative bounds for j={j}: {len(report.points) - len(report.violations)}"
        f"/{len(report.points)} points hold"
    )
    return report


def canonical_grid(m: int) -> List[Tuple[Fraction, Fraction]]:
    """m x m rational grid: a = i/(2(m-1)) for i < m, b = k/m for 1 <= k <= m."""
    if m < 2:
        raise InvalidShapeError("Grid size must be at least 2")
    return [
        (Fraction(i, 2 * (m - 1)), Fraction(k, m))
        for i in range(m)
        for k in range(1, m + 1)
    ]


@dataclass(frozen=True)
class SimilarityRecord:
    """How a triangle maps onto its normalized shape.

    ``order`` lists the input vertex indices that became p1, p2, p3;
    K_j(tri) = scale**d_j * K_j(T_{a,b}) with scale^2 = ``scale_squared``,
    where d_j = 2 for j = 3 and 1 otherwise.
    """

    order: Tuple[int, int, int]
    scale_squared: Fraction
    reflected: bool
    converted: bool

    @property
    def scale(self) -> float:
        return math.sqrt(self.scale_squared)

    def k_factor(self, j: int) -> float:
        """Ratio K_j(tri) / K_j(T_{a,b})."""
        return float(self.scale_squared) if K_DEGREE[j] == 2 else self.scale


def normalize_shape(tri: Triangle) -> Tuple[TriangleShape, SimilarityRecord]:
    """Relabel so that |p1p2| >= |p2p3| >= |p3p1| and map onto T_{a,b}.

    Ties are broken by the lexicographic order of the relabeled vertices.
    A triangle given literally as T_{a,b} with 0 <= a <= 1/2, 0 < b <= 1
    is returned unchanged.

    Raises:
        DegenerateTriangleError: For zero-area triangles
    """
    if tri.is_degenerate():
        raise DegenerateTriangleError(f"Degenerate triangle {tri.vertices}")
    verts = tri.vertices
    # A literal T_{a,b} inside the canonical region is kept as given
    if verts[0] == (0, 0) and verts[1] == (1, 0):
        given = TriangleShape(verts[2][0], verts[2][1], exact=not tri.converted)
        if given.in_canonical_region():
            return given, SimilarityRecord((0, 1, 2), Fraction(1), False, tri.converted)
    candidates = []
    for order in itertools.permutations(range(3)):
        p1, p2, p3 = (verts[i] for i in order)
        if _dist2(p1, p2) >= _dist2(p2, p3) >= _dist2(p3, p1):
            candidates.append(((p1, p2, p3), order))
    (p1, p2, p3), order = min(candidates)
    base2 = _dist2(p1, p2)
    ux, uy = p2[0] - p1[0], p2[1] - p1[1]
    vx, vy = p3[0] - p1[0], p3[1] - p1[1]
    cross = ux * vy - uy * vx
    shape = TriangleShape(
        a=(ux * vx + uy * vy) / base2,
        b=abs(cross) / base2,
        exact=not tri.converted,
    )
    record = SimilarityRecord(
        order=tuple(order),
        scale_squared=base2,
        reflected=cross < 0,
        converted=tri.converted,
    )
    return shape, record


def k_constant_surface(j: int, m: int) -> pd.DataFrame:
    """Sample K_j(T_{a,b}) on the m x m canonical grid.

    Returns:
        DataFrame with columns a, b, k (floats) and l ('p/q')
    """
    rows = []
    for a, b in canonical_grid(m):
        value = l_constant(j, TriangleShape(a, b))
        rows.append({"a": float(a), "b": float(b), "k": math.sqrt(value), "l": format_rational(value)})
    return pd.DataFrame(rows, columns=["a", "b", "k", "l"])


@dataclass(frozen=True)
class TableShape:
    label: str
    a: Fraction
    b: Fraction
    exact: bool = True

    @property
    def shape(self) -> TriangleShape:
        return TriangleShape(self.a, self.b, self.exact)


def _equilateral_height() -> Fraction:
    return Fraction(math.sqrt(3) / 2).limit_denominator(settings.MAX_DENOMINATOR)


# Row order of the published constants tables
TABLE_SHAPES: List[TableShape] = [
    TableShape("T_{0,1}", Fraction(0), Fraction(1)),
    TableShape("T_{0,1/2}", Fraction(0), Fraction(1, 2)),
    TableShape("T_{0,1/5}", Fraction(0), Fraction(1, 5)),
    TableShape("T_{0,1/10}", Fraction(0), Fraction(1, 10)),
    TableShape("T_{1/4,1}", Fraction(1, 4), Fraction(1)),
    TableShape("T_{1/4,1/2}", Fraction(1, 4), Fraction(1, 2)),
    TableShape("T_{1/4,1/5}", Fraction(1, 4), Fraction(1, 5)),
    TableShape("T_{1/4,1/10}", Fraction(1, 4), Fraction(1, 10)),
    TableShape("T_{1/2,sqrt(3)/2}", Fraction(1, 2), _equilateral_height(), exact=False),
    TableShape("T_{1/2,1/2}", Fraction(1, 2), Fraction(1, 2)),
    TableShape("T_{1/2,1/5}", Fraction(1, 2), Fraction(1, 5)),
    TableShape("T_{1/2,1/10}", Fraction(1, 2), Fraction(1, 10)),
]


def shape_constants(shape: TriangleShape) -> Dict[int, Fraction]:
    """Exact L_1..L_4 of a shape."""
    return {j: l_constant(j, shape) for j in range(1, 5)}
