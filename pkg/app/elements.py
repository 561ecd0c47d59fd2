"""Local quadratic forms of the two element families and their interpolants.

The alpha family (Q_alpha = span{x^2+y^2, x, y, 1}) is fixed by its three
edge means and its element mean; the beta family (full quadratics) by its
vertex values and the normal-flux integrals over its edges. Every form
below is written once over a generic scalar type, so the same code
produces exact values (Fraction), symbolic local matrices (RatFn in a, b,
h) and exact Hessians (QuadraticJet).
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Any, Callable, Dict, List, Sequence, Tuple, Union

import sympy

from app.geometry import Triangle, TriangleShape, edge_data
from app.schemas import ConsistencyError, DegenerateTriangleError, FormKind
from app.symbolic import (
    MultiPoly,
    QuadraticJet,
    RatFn,
    SymRatMatrix,
    edge_flux,
    integrate_poly_over_segment,
    integrate_poly_over_triangle,
    poly_eval_exact,
    to_fraction,
)

logger = logging.getLogger(__name__)

ALPHA_DOFS = ("w1", "w2", "w3", "u0")
BETA_DOFS = ("u1", "u2", "u3", "w1", "w2", "w3")
XY = ("x", "y")


@dataclass(frozen=True)
class ElementGeometry:
    """Area s and normalized squared edge lengths c_k = |gamma_k|^2 / s."""

    s: Any
    c1: Any
    c2: Any
    c3: Any

    @classmethod
    def from_shape(cls, a: Any, b: Any, h: Any = 1) -> "ElementGeometry":
        """Geometry of (0,0), (h,0), (ah,bh) in the scalar type of a, b, h."""
        return cls(
            s=b * h * h / 2,
            c1=2 * ((1 - a) ** 2 + b ** 2) / b,
            c2=2 * (a ** 2 + b ** 2) / b,
            c3=2 / b,
        )

    @classmethod
    def from_triangle(cls, tri: Triangle) -> "ElementGeometry":
        data = edge_data(tri)
        return cls(s=data.S, c1=data.A2 / data.S, c2=data.B2 / data.S, c3=data.C2 / data.S).validate()

    @classmethod
    def symbolic(cls) -> "ElementGeometry":
        names = ("a", "b", "h")
        a, b, h = (RatFn.variable(name, names) for name in names)
        return cls.from_shape(a, b, h)

    def heron_defect(self) -> Any:
        """2(c1c2 + c2c3 + c3c1) - (c1^2 + c2^2 + c3^2), which is 16 for any triangle."""
        c1, c2, c3 = self.c1, self.c2, self.c3
        return 2 * (c1 * c2 + c2 * c3 + c3 * c1) - (c1 * c1 + c2 * c2 + c3 * c3)

    def validate(self) -> "ElementGeometry":
        """Check s > 0, c_k > 0 and the Heron relation for rational geometries."""
        values = (self.s, self.c1, self.c2, self.c3)
        if all(isinstance(v, (int, Fraction)) for v in values):
            if any(v <= 0 for v in values):
                raise DegenerateTriangleError(f"Invalid element geometry {values}")
            if self.heron_defect() != 16:
                raise ConsistencyError(f"Edge data of {values} violate the triangle relation")
        return self


@dataclass(frozen=True)
class LocalDofsAlpha:
    """Edge means w1..w3 and element mean u0."""

    w1: Any
    w2: Any
    w3: Any
    u0: Any

    def as_tuple(self) -> Tuple[Any, ...]:
        return (self.w1, self.w2, self.w3, self.u0)


@dataclass(frozen=True)
class LocalDofsBeta:
    """Vertex values u1..u3 and edge normal-flux integrals w1..w3."""

    u1: Any
    u2: Any
    u3: Any
    w1: Any
    w2: Any
    w3: Any

    def as_tuple(self) -> Tuple[Any, ...]:
        return (self.u1, self.u2, self.u3, self.w1, self.w2, self.w3)


def alpha_form_0(s, c1, c2, c3, w1, w2, w3, u0):
    """Squared L2 norm of the alpha interpolant."""
    v0 = (
        (3 * c2 + 3 * c3 - c1) * w1
        + (3 * c3 + 3 * c1 - c2) * w2
        + (3 * c1 + 3 * c2 - c3) * w3
    )
    return s / 15 * (
        8 * (c1 ** 2 + c2 ** 2 + c3 ** 2) * (w1 + w2 + w3 - 3 * u0) ** 2
        / (c1 + c2 + c3) ** 2
        - 2 * (w1 + w2 + w3 - 3 * u0) * v0 / (c1 + c2 + c3)
        + 5 * (w1 ** 2 + w2 ** 2 + w3 ** 2)
    )


def alpha_form_1(s, c1, c2, c3, w1, w2, w3, u0):
    """Squared H1 seminorm of the alpha interpolant."""
    return (
        32 * (w1 + w2 + w3 - 3 * u0) ** 2 / (c1 + c2 + c3)
        + (c1 + c2 - c3) * (w1 - w2) ** 2
        + (c2 + c3 - c1) * (w2 - w3) ** 2
        + (c3 + c1 - c2) * (w3 - w1) ** 2
    ) / 2


def beta_form_0(s, c1, c2, c3, u1, u2, u3, w1, w2, w3):
    """Squared L2 norm of the beta interpolant."""
    v1 = (13 * u1 + u2 + u3) / 4 - (4 * w1 - (c2 - c3) * (u2 - u3)) / c1
    v2 = (13 * u2 + u3 + u1) / 4 - (4 * w2 - (c3 - c1) * (u3 - u1)) / c2
    v3 = (13 * u3 + u1 + u2) / 4 - (4 * w3 - (c1 - c2) * (u1 - u2)) / c3
    return s / 720 * (
        21 * (u1 ** 2 + u2 ** 2 + u3 ** 2) - 6 * (u1 * u2 + u2 * u3 + u3 * u1)
        + 6 * (v1 ** 2 + v2 ** 2 + v3 ** 2) + 10 * (v1 * v2 + v2 * v3 + v3 * v1)
    )


def beta_form_1(s, c1, c2, c3, u1, u2, u3, w1, w2, w3):
    """Squared H1 seminorm of the beta interpolant."""
    return (
        ((u2 - u3) ** 2 + w1 ** 2) / c1
        + ((u3 - u1) ** 2 + w2 ** 2) / c2
        + ((u1 - u2) ** 2 + w3 ** 2) / c3
    ) / 3


def beta_form_2(s, c1, c2, c3, u1, u2, u3, w1, w2, w3):
    """Squared H2 seminorm of the beta interpolant."""
    v4 = 2 * u1 - u2 - u3 + (4 * w1 - (c2 - c3) * (u2 - u3)) / c1
    v5 = 2 * u2 - u3 - u1 + (4 * w2 - (c3 - c1) * (u3 - u1)) / c2
    v6 = 2 * u3 - u1 - u2 + (4 * w3 - (c1 - c2) * (u1 - u2)) / c3
    return (
        (c1 * v4 + c2 * v5 + c3 * v6) ** 2 - 8 * (v4 * v5 + v5 * v6 + v6 * v4)
    ) / s / 16


FORMS: Dict[FormKind, Tuple[Callable[..., Any], Tuple[str, ...]]] = {
    FormKind.ALPHA0: (alpha_form_0, ALPHA_DOFS),
    FormKind.ALPHA1: (alpha_form_1, ALPHA_DOFS),
    FormKind.BETA0: (beta_form_0, BETA_DOFS),
    FormKind.BETA1: (beta_form_1, BETA_DOFS),
    FormKind.BETA2: (beta_form_2, BETA_DOFS),
}


def evaluate_form(form: Union[FormKind, str], geom: ElementGeometry, dofs: Sequence[Any]) -> Any:
    """Evaluate a local form at a dof vector in any scalar type."""
    function, names = FORMS[FormKind(form)]
    dofs = tuple(dofs)
    if len(dofs) != len(names):
        raise ValueError(f"{FormKind(form).value} takes {len(names)} dofs, got {len(dofs)}")
    return function(geom.s, geom.c1, geom.c2, geom.c3, *dofs)


def f_alpha(kind: int, geom: ElementGeometry, dofs: LocalDofsAlpha) -> Any:
    """F^alpha_kind for kind 0 (L2) or 1 (H1 seminorm)."""
    form = {0: FormKind.ALPHA0, 1: FormKind.ALPHA1}.get(kind)
    if form is None:
        raise ValueError(f"Alpha form kind must be 0 or 1, got {kind}")
    return evaluate_form(form, geom, dofs.as_tuple())


def f_beta(kind: int, geom: ElementGeometry, dofs: LocalDofsBeta) -> Any:
    """F^beta_kind for kind 0 (L2), 1 (H1 seminorm) or 2 (H2 seminorm)."""
    form = {0: FormKind.BETA0, 1: FormKind.BETA1, 2: FormKind.BETA2}.get(kind)
    if form is None:
        raise ValueError(f"Beta form kind must be 0, 1 or 2, got {kind}")
    return evaluate_form(form, geom, dofs.as_tuple())


def _one_like(geom: ElementGeometry) -> Any:
    return geom.s * 0 + 1


def local_matrix(form: Union[FormKind, str], geom: ElementGeometry) -> SymRatMatrix:
    """Half-Hessian M of a local form, so that dof^T M dof equals the form.

    The Hessian is read off a second-order jet; a form that is not exactly
    quadratic in the dofs would set the truncation flag.
    """
    function, names = FORMS[FormKind(form)]
    one = _one_like(geom)
    dofs = [QuadraticJet.variable(i, one) for i in range(len(names))]
    jet = function(geom.s, geom.c1, geom.c2, geom.c3, *dofs)
    if jet.truncated:
        raise ConsistencyError(f"Form {FormKind(form).value} is not quadratic in its dofs")
    m = len(names)
    rows = [[jet.hessian_entry(p, q) / 2 for q in range(m)] for p in range(m)]
    return SymRatMatrix(rows)


@lru_cache(maxsize=None)
def symbolic_local_matrix(form: FormKind) -> SymRatMatrix:
    """Local matrix as rational functions of a, b, h."""
    logger.debug(f"Building symbolic local matrix {form.value}")
    return local_matrix(form, ElementGeometry.symbolic())


def local_matrix_at(form: Union[FormKind, str], shape: TriangleShape, h: Fraction) -> SymRatMatrix:
    """Exact local matrix of (0,0), (h,0), (ah,bh) from the cached symbolic one."""
    if shape.b <= 0:
        raise DegenerateTriangleError(f"Shape height must be positive, got b={shape.b}")
    return symbolic_local_matrix(FormKind(form)).evaluate({"a": shape.a, "b": shape.b, "h": h})


def _vertices(tri: Triangle) -> Tuple[Tuple[Fraction, Fraction], ...]:
    if tri.is_degenerate():
        raise DegenerateTriangleError(f"Degenerate triangle {tri.vertices}")
    return tri.vertices


def _as_xy(u: MultiPoly) -> MultiPoly:
    names = list(XY) + [v for v in u.variables if v not in XY]
    return u.set_variables(names)


def _constant(value: Any) -> Fraction:
    if isinstance(value, MultiPoly):
        raise ValueError("Expected a constant; the polynomial has parameters besides x, y")
    return to_fraction(value)


def alpha_dofs(tri: Triangle, u: MultiPoly) -> LocalDofsAlpha:
    """Edge means on gamma_1 = p2p3, gamma_2 = p3p1, gamma_3 = p1p2 and the element mean."""
    p1, p2, p3 = _vertices(tri)
    u = _as_xy(u)
    w1 = integrate_poly_over_segment(u, p2, p3)
    w2 = integrate_poly_over_segment(u, p3, p1)
    w3 = integrate_poly_over_segment(u, p1, p2)
    u0 = _constant(integrate_poly_over_triangle(u, (p1, p2, p3))) / tri.area
    return LocalDofsAlpha(_constant(w1), _constant(w2), _constant(w3), u0)


def beta_dofs(tri: Triangle, u: MultiPoly) -> LocalDofsBeta:
    """Vertex values and outward normal-flux integrals over gamma_1..gamma_3."""
    p1, p2, p3 = _vertices(tri)
    u = _as_xy(u)
    sign = 1 if tri.signed_area > 0 else -1
    values = [poly_eval_exact(u, {"x": p[0], "y": p[1]}) for p in (p1, p2, p3)]
    fluxes = [
        sign * _constant(edge_flux(u, start, end))
        for start, end in ((p2, p3), (p3, p1), (p1, p2))
    ]
    return LocalDofsBeta(*values, *fluxes)


def _monomial(px: int, py: int) -> MultiPoly:
    return MultiPoly.from_terms(XY, {(px, py): 1})


def alpha_basis() -> List[MultiPoly]:
    return [_monomial(2, 0) + _monomial(0, 2), _monomial(1, 0), _monomial(0, 1), _monomial(0, 0)]


def beta_basis() -> List[MultiPoly]:
    return [_monomial(2, 0), _monomial(1, 1), _monomial(0, 2),
            _monomial(1, 0), _monomial(0, 1), _monomial(0, 0)]


def _solve_interpolant(basis: List[MultiPoly], functional: Callable[[MultiPoly], Tuple[Fraction, ...]],
                       u: MultiPoly) -> MultiPoly:
    columns = [functional(phi) for phi in basis]
    matrix = sympy.Matrix([
        [sympy.Rational(col[k].numerator, col[k].denominator) for col in columns]
        for k in range(len(basis))
    ])
    rhs = sympy.Matrix([sympy.Rational(v.numerator, v.denominator) for v in functional(u)])
    if matrix.det() == 0:
        raise DegenerateTriangleError("Interpolation conditions are not unisolvent")
    coefficients = matrix.LUsolve(rhs)
    result = MultiPoly.constant(0, XY)
    for phi, c in zip(basis, coefficients):
        result = result + phi * Fraction(int(c.p), int(c.q))
    return result


def alpha_interpolant(tri: Triangle, u: MultiPoly) -> MultiPoly:
    """Element of Q_alpha with the same edge means and element mean as u."""
    return _solve_interpolant(alpha_basis(), lambda v: alpha_dofs(tri, v).as_tuple(), u)


def beta_interpolant(tri: Triangle, u: MultiPoly) -> MultiPoly:
    """Quadratic with the same vertex values and edge normal fluxes as u."""
    return _solve_interpolant(beta_basis(), lambda v: beta_dofs(tri, v).as_tuple(), u)


def closed_form_alpha_parts(a, b, h, w1, w2, w3, u0, x, y) -> Tuple[Any, Any]:
    """Numerator and x,y-free denominator of the explicit alpha interpolant
    on (0,0), (h,0), (ah,bh).
    """
    q = 1 - a + a ** 2 + b ** 2
    linear = (b * (2 * x - h) + 2 * (1 - a) * y) * w1 - (b * (2 * x - h) - 2 * a * y) * w2 - (2 * y - b * h) * w3
    bubble = 2 * (3 * (x ** 2 + y ** 2) - 2 * (1 + a) * h * x - 2 * b * h * y + a * h ** 2)
    numerator = h * q * linear + b * bubble * (w1 + w2 + w3 - 3 * u0)
    return numerator, b * h ** 2 * q


def closed_form_beta_parts(a, b, h, u1, u2, u3, w1, w2, w3, x, y) -> Tuple[Any, Any]:
    """Numerator and x,y-free denominator of the explicit beta interpolant
    on (0,0), (h,0), (ah,bh).
    """
    d1 = 1 - a
    q1 = d1 ** 2 + b ** 2
    q2 = a ** 2 + b ** 2
    linear = -(b * (x - h) + d1 * y) * u1 + (b * x - a * y) * u2 + y * u3
    term1 = (b * (x - h) + d1 * y) * (b * x + d1 * y) * (b * w1 + q1 * u1 + (a * d1 - b ** 2) * u2 - d1 * u3)
    term2 = (b * (x - h) - a * y) * (b * x - a * y) * (b * w2 + (a * d1 - b ** 2) * u1 + q2 * u2 - a * u3)
    term3 = (y - b * h) * y * (b * w3 - d1 * u1 - a * u2 + u3)
    numerator = b * h * q1 * q2 * linear + q2 * term1 + q1 * term2 + q1 * q2 * term3
    return numerator, b ** 2 * h ** 2 * q1 * q2


def _xy_vars() -> Tuple[MultiPoly, MultiPoly]:
    return MultiPoly.variable("x", XY), MultiPoly.variable("y", XY)


def closed_form_alpha_interpolant(shape: TriangleShape, h: Fraction, dofs: LocalDofsAlpha) -> MultiPoly:
    """Explicit alpha interpolant on (0,0), (h,0), (ah,bh) from its dofs."""
    x, y = _xy_vars()
    numerator, denominator = closed_form_alpha_parts(shape.a, shape.b, Fraction(h), *dofs.as_tuple(), x, y)
    return numerator * (1 / Fraction(denominator))


def closed_form_beta_interpolant(shape: TriangleShape, h: Fraction, dofs: LocalDofsBeta) -> MultiPoly:
    """Explicit beta interpolant on (0,0), (h,0), (ah,bh) from its dofs."""
    x, y = _xy_vars()
    numerator, denominator = closed_form_beta_parts(shape.a, shape.b, Fraction(h), *dofs.as_tuple(), x, y)
    return numerator * (1 / Fraction(denominator))


def l2_norm_squared(u: MultiPoly, tri: Triangle) -> Fraction:
    return to_fraction(integrate_poly_over_triangle(_as_xy(u) ** 2, tri.vertices))


def h1_seminorm_squared(u: MultiPoly, tri: Triangle) -> Fraction:
    u = _as_xy(u)
    grad2 = u.diff("x") ** 2 + u.diff("y") ** 2
    return to_fraction(integrate_poly_over_triangle(grad2, tri.vertices))


def h2_seminorm_squared(u: MultiPoly, tri: Triangle) -> Fraction:
    u = _as_xy(u)
    ux, uy = u.diff("x"), u.diff("y")
    hess2 = ux.diff("x") ** 2 + 2 * ux.diff("y") ** 2 + uy.diff("y") ** 2
    return to_fraction(integrate_poly_over_triangle(hess2, tri.vertices))
