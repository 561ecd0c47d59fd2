"""Floating-point estimates of maximum generalized eigenvalues.

Two independent solver paths are provided for the pencils assembled in
``app.mesh``: a dense path (Cholesky reduction of B, then a symmetric
eigensolver) and a Lanczos path working on the pencil directly. The
degree-limited polynomial estimates build their Gram matrices exactly and
orthogonalize against the denominator form in extended precision before
the final float solve.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import mpmath
import numpy as np
import sympy
from scipy.linalg import LinAlgError, cholesky, eigh, solve_triangular
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from app.config import settings
from app.geometry import TriangleShape
from app.mesh import SPACE_FOR_J, assemble
from app.schemas import ConsistencyError, SpaceKind
from app.symbolic import SymRatMatrix, monomial_integral_unit_triangle, to_fraction

logger = logging.getLogger(__name__)

METHODS = ("cholesky", "lanczos")


@dataclass(frozen=True)
class EigenEstimate:
    """Largest eigenvalue of a pencil with its residual."""

    value: float
    residual: float
    iterations: int
    method: str = "cholesky"
    vector: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def constant(self) -> float:
        """Square root of the eigenvalue, the ratio bound itself."""
        return math.sqrt(max(self.value, 0.0))


@dataclass(frozen=True)
class PolynomialSubspaceSpec:
    degree: int = 10
    space: SpaceKind = SpaceKind.V11

    def __post_init__(self):
        if self.degree < 2:
            raise ValueError(f"Polynomial degree must be at least 2, got {self.degree}")

    @property
    def size(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2


def _as_float(matrix: Any) -> np.ndarray:
    if isinstance(matrix, SymRatMatrix):
        return matrix.to_float()
    return np.asarray(matrix, dtype=float)


def _residual(a: np.ndarray, b: np.ndarray, value: float, x: np.ndarray) -> float:
    return float(np.linalg.norm(a @ x - value * (b @ x)) / np.linalg.norm(x))


def _cholesky_path(a: np.ndarray, b: np.ndarray) -> EigenEstimate:
    try:
        factor = cholesky(b, lower=True)
    except LinAlgError as exc:
        raise ConsistencyError("Denominator matrix is not numerically positive definite") from exc
    # L^-1 A L^-T
    half = solve_triangular(factor, a, lower=True)
    reduced = solve_triangular(factor, half.T, lower=True)
    reduced = (reduced + reduced.T) / 2
    values, vectors = eigh(reduced)
    x = solve_triangular(factor, vectors[:, -1], lower=True, trans="T")
    value = float(values[-1])
    return EigenEstimate(value, _residual(a, b, value, x), 1, "cholesky", x)


def _lanczos_path(a: np.ndarray, b: np.ndarray) -> EigenEstimate:
    n = a.shape[0]
    if n < 3:
        logger.debug(f"Pencil of order {n} is too small for Lanczos, using the dense path")
        return _cholesky_path(a, b)
    calls = {"count": 0}

    def matvec(x: np.ndarray) -> np.ndarray:
        calls["count"] += 1
        return a @ x

    operator = LinearOperator((n, n), matvec=matvec, dtype=float)
    try:
        values, vectors = eigsh(operator, k=1, M=b, which="LA", tol=0)
    except ArpackNoConvergence as exc:
        raise ConsistencyError(f"Lanczos iteration did not converge for order {n}") from exc
    except (LinAlgError, RuntimeError) as exc:
        raise ConsistencyError("Denominator matrix is not numerically positive definite") from exc
    x = vectors[:, 0]
    value = float(values[0])
    return EigenEstimate(value, _residual(a, b, value, x), calls["count"], "lanczos", x)


def max_gen_eig(A: Any, B: Any, method: str = "cholesky") -> EigenEstimate:
    """Estimate the largest eigenvalue of A x = lambda B x.

    Args:
        A: Symmetric numerator matrix (SymRatMatrix or float array)
        B: Symmetric positive definite denominator matrix
        method: ``cholesky`` (dense reduction) or ``lanczos``

    Returns:
        EigenEstimate with the eigenvalue, residual and operator count

    Raises:
        ConsistencyError: If B is not numerically positive definite
        ValueError: If the shapes disagree or the method is unknown
    """
    a, b = _as_float(A), _as_float(B)
    if a.ndim != 2 or a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError(f"Pencil shapes do not match: {a.shape} and {b.shape}")
    if method == "cholesky":
        return _cholesky_path(a, b)
    if method == "lanczos":
        return _lanczos_path(a, b)
    raise ValueError(f"Unknown eigen method '{method}', expected one of {METHODS}")


@lru_cache(maxsize=128)
def discrete_constant(j: int, n: int, shape: TriangleShape, method: str = "cholesky") -> float:
    """C_j^(n) of T_{a,b}: square root of the largest pencil eigenvalue."""
    if j not in SPACE_FOR_J:
        raise ValueError(f"Constant index must be 1..4, got {j}")
    pencil = assemble(SPACE_FOR_J[j], j, n, shape)
    estimate = max_gen_eig(pencil.A, pencil.B, method)
    logger.info(
        f"C_{j}^({n}) at (a, b) = ({float(shape.a):.6g}, {float(shape.b):.6g}): "
        f"{estimate.constant:.10f} (residual {estimate.residual:.2e})"
    )
    return estimate.constant


def bound_from_discrete(j: int, n: int, discrete_value: float, c2_bound: Optional[float] = None) -> float:
    """Upper bound for C_j from the discrete constant on an n-refinement.

    Raises:
        ValueError: For n < 2, an unknown j, or j = 4 without the C_2 bound
    """
    if n < 2:
        raise ValueError(f"Refinement level must be at least 2, got {n}")
    if j in (1, 2):
        return math.sqrt(n**2 / (n**2 - 1)) * discrete_value
    if j == 3:
        return math.sqrt(n**4 / (n**4 - 1)) * discrete_value
    if j == 4:
        if c2_bound is None:
            raise ValueError("The j=4 bound needs an upper bound for C_2")
        return math.sqrt(discrete_value**2 + c2_bound**2 / n**2)
    raise ValueError(f"Constant index must be 1..4, got {j}")


def upper_bound(j: int, n: int, shape: TriangleShape) -> float:
    """Bound for C_j on T_{a,b} from refinement level n, chaining C_2 for j=4."""
    c2_bound = None
    if j == 4:
        c2_bound = bound_from_discrete(2, n, discrete_constant(2, n, shape))
    return bound_from_discrete(j, n, discrete_constant(j, n, shape), c2_bound)


# Polynomial subspace estimates

def monomial_exponents(degree: int) -> List[Tuple[int, int]]:
    return [(p, total - p) for total in range(degree + 1) for p in range(total, -1, -1)]


def triangle_moments(shape: TriangleShape, max_degree: int) -> Dict[Tuple[int, int], Fraction]:
    """Exact integrals of x^p y^q over T_{a,b} for p + q <= max_degree."""
    a, b = to_fraction(shape.a), to_fraction(shape.b)
    moments = {}
    for p, q in monomial_exponents(max_degree):
        total = Fraction(0)
        for k in range(p + 1):
            total += math.comb(p, k) * a**k * monomial_integral_unit_triangle(p - k, q + k)
        moments[(p, q)] = b ** (q + 1) * total
    return moments


def _segment_monomial_integral(start: Tuple[Fraction, Fraction], end: Tuple[Fraction, Fraction], p: int, q: int) -> Fraction:
    """Integral of x^p y^q along a segment, parametrized over [0, 1]."""
    (x0, y0), (x1, y1) = start, end
    dx, dy = x1 - x0, y1 - y0
    total = Fraction(0)
    for i in range(p + 1):
        for k in range(q + 1):
            coeff = math.comb(p, i) * x0 ** (p - i) * dx**i * math.comb(q, k) * y0 ** (q - k) * dy**k
            total += coeff / (i + k + 1)
    return total


# (d/dx order, d/dy order, weight) of each seminorm component
SEMINORM_COMPONENTS = {
    0: [(0, 0, 1)],
    1: [(1, 0, 1), (0, 1, 1)],
    2: [(2, 0, 1), (1, 1, 2), (0, 2, 1)],
}


def _falling(value: int, order: int) -> int:
    out = 1
    for step in range(order):
        out *= value - step
    return out


def gram_matrix(exponents: List[Tuple[int, int]], moments: Dict[Tuple[int, int], Fraction], order: int) -> np.ndarray:
    """Exact Gram matrix of the L2 norm (order 0) or H1/H2 seminorm."""
    size = len(exponents)
    gram = np.empty((size, size), dtype=object)
    gram.fill(Fraction(0))
    for dx, dy, weight in SEMINORM_COMPONENTS[order]:
        derived = [(_falling(p, dx) * _falling(q, dy), p - dx, q - dy) for p, q in exponents]
        for i, (ci, pi, qi) in enumerate(derived):
            if ci == 0:
                continue
            for k in range(i, size):
                ck, pk, qk = derived[k]
                if ck == 0:
                    continue
                value = weight * ci * ck * moments[(pi + pk, qi + qk)]
                gram[i, k] += value
                if k != i:
                    gram[k, i] += value
    return gram


def constraint_rows(space: SpaceKind, shape: TriangleShape, exponents: List[Tuple[int, int]],
                    moments: Dict[Tuple[int, int], Fraction]) -> List[List[Fraction]]:
    """Functionals defining the V-space, applied to each monomial."""
    a, b = to_fraction(shape.a), to_fraction(shape.b)
    vertices = [(Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (a, b)]
    if space == SpaceKind.V11:
        return [[moments[(p, q)] for p, q in exponents]]
    if space == SpaceKind.V12:
        edges = [(vertices[0], vertices[1]), (vertices[1], vertices[2]), (vertices[2], vertices[0])]
        return [[_segment_monomial_integral(s, e, p, q) for p, q in exponents] for s, e in edges]
    return [[x**p * y**q for p, q in exponents] for x, y in vertices]


def constrained_basis(rows: List[List[Fraction]]) -> np.ndarray:
    """Exact null-space basis of the constraint rows, one column per vector.

    Raises:
        ConsistencyError: If the constraint rows are rank deficient
    """
    matrix = sympy.Matrix([[sympy.Rational(v.numerator, v.denominator) for v in row] for row in rows])
    if matrix.rank() != len(rows):
        raise ConsistencyError(f"Constraint functionals are rank deficient (rank {matrix.rank()} < {len(rows)})")
    vectors = matrix.nullspace()
    basis = np.empty((matrix.cols, len(vectors)), dtype=object)
    for col, vector in enumerate(vectors):
        for row in range(matrix.cols):
            basis[row, col] = to_fraction(vector[row])
    return basis


def _mp(value: Fraction) -> Any:
    return mpmath.mpf(value.numerator) / value.denominator


def b_orthonormal_reduction(a: np.ndarray, b: np.ndarray, dps: Optional[int] = None) -> np.ndarray:
    """Float matrix of the pencil (a, b) in a b-orthonormal basis.

    The change of basis is the inverse Cholesky factor of b computed in
    extended precision, so the returned matrix is well conditioned even
    when b is not.
    """
    dps = dps or settings.MP_DPS
    size = a.shape[0]
    with mpmath.workdps(dps):
        a_mp = mpmath.matrix([[_mp(to_fraction(a[i, k])) for k in range(size)] for i in range(size)])
        b_mp = mpmath.matrix([[_mp(to_fraction(b[i, k])) for k in range(size)] for i in range(size)])
        try:
            factor = mpmath.cholesky(b_mp)
        except ValueError as exc:
            raise ConsistencyError("Denominator Gram matrix is not positive definite") from exc
        inverse = mpmath.inverse(factor)
        reduced = inverse * a_mp * inverse.T
        out = np.array([[float(reduced[i, k]) for k in range(size)] for i in range(size)], dtype=float)
    return (out + out.T) / 2


@lru_cache(maxsize=256)
def poly_subspace_constant(j: int, shape: TriangleShape, spec: Optional[PolynomialSubspaceSpec] = None) -> float:
    """Supremum of the j-th ratio over polynomials of bounded degree in the V-space.

    Lower estimate of C_j(T_{a,b}): the supremum is taken over a subspace.

    Raises:
        ValueError: If j is unknown or spec.space does not fit j
        ConsistencyError: If the constraints or the denominator form degenerate
    """
    if j not in SPACE_FOR_J:
        raise ValueError(f"Constant index must be 1..4, got {j}")
    if spec is None:
        spec = PolynomialSubspaceSpec(settings.DEFAULT_DEGREE, SPACE_FOR_J[j])
    if spec.space != SPACE_FOR_J[j]:
        raise ValueError(f"C_{j} lives in {SPACE_FOR_J[j].value}, not {spec.space.value}")
    exponents = monomial_exponents(spec.degree)
    moments = triangle_moments(shape, 2 * spec.degree)
    numerator_order, denominator_order = {1: (0, 1), 2: (0, 1), 3: (0, 2), 4: (1, 2)}[j]
    basis = constrained_basis(constraint_rows(spec.space, shape, exponents, moments))
    a = basis.T.dot(gram_matrix(exponents, moments, numerator_order)).dot(basis)
    b = basis.T.dot(gram_matrix(exponents, moments, denominator_order)).dot(basis)
    reduced = b_orthonormal_reduction(a, b)
    value = float(eigh(reduced, eigvals_only=True)[-1])
    constant = math.sqrt(max(value, 0.0))
    logger.info(
        f"Degree-{spec.degree} estimate of C_{j} at (a, b) = "
        f"({float(shape.a):.6g}, {float(shape.b):.6g}): {constant:.10f}"
    )
    return constant
