"""Exact rational, polynomial and rational-function arithmetic.

Polynomials are sparse elements of sympy polynomial rings over QQ. The
wrappers here add name-based unification of variable sets, exact
evaluation into ``fractions.Fraction``, triangle and segment integrals by
affine pullback, a second-order jet for exact Hessians of quadratic forms,
a tree-walking evaluator that maps sympy expressions into any of these
domains, a seeded Schwartz-Zippel harness, and dense exact symmetric
matrices.
"""

import logging
import math
import random
from fractions import Fraction
from functools import lru_cache
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from sympy import QQ
from sympy.polys.rings import PolyElement, PolyRing, ring

logger = logging.getLogger(__name__)

Rational = Fraction

# Schwartz-Zippel sampling bounds
SZ_MAX_NUMERATOR = 10**6
SZ_MAX_DENOMINATOR = 2**16

Scalar = Union[int, Fraction]


def to_fraction(value: Any) -> Fraction:
    """Convert ints, Fractions, QQ elements and sympy rationals to Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, sympy.Rational):
        return Fraction(int(value.p), int(value.q))
    if hasattr(value, "numerator") and hasattr(value, "denominator"):
        return Fraction(int(value.numerator), int(value.denominator))
    raise TypeError(f"Cannot convert {type(value).__name__} to an exact rational")


def _qq(value: Scalar) -> Any:
    value = to_fraction(value)
    return QQ(value.numerator, value.denominator)


@lru_cache(maxsize=None)
def get_ring(names: Tuple[str, ...]) -> PolyRing:
    """Return the cached polynomial ring QQ[names] in lexicographic order."""
    if len(set(names)) != len(names):
        raise ValueError(f"Duplicate variable names: {names}")
    R, *_ = ring(",".join(names), QQ) if names else ring("", QQ)
    return R


def _merged_names(first: Sequence[str], second: Sequence[str]) -> Tuple[str, ...]:
    merged = list(first)
    merged.extend(name for name in second if name not in merged)
    return tuple(merged)


class MultiPoly:
    """Multivariate polynomial with exact rational coefficients.

    Operands over different variable lists are unified by name; the
    result's variables are the left operand's followed by new names.
    """

    __slots__ = ("element",)

    def __init__(self, element: PolyElement):
        self.element = element

    @classmethod
    def variable(cls, name: str, variables: Sequence[str]) -> "MultiPoly":
        R = get_ring(tuple(variables))
        return cls(R.gens[list(variables).index(name)])

    @classmethod
    def constant(cls, value: Scalar, variables: Sequence[str] = ()) -> "MultiPoly":
        R = get_ring(tuple(variables))
        return cls(R.ground_new(_qq(value)))

    @classmethod
    def from_terms(
        cls,
        variables: Sequence[str],
        terms: Mapping[Tuple[int, ...], Scalar],
    ) -> "MultiPoly":
        R = get_ring(tuple(variables))
        for exponents in terms:
            if len(exponents) != len(variables):
                raise ValueError(f"Exponent vector {exponents} does not match {variables}")
        return cls(R.from_dict({tuple(m): _qq(c) for m, c in terms.items() if c}))

    @property
    def ring(self) -> PolyRing:
        return self.element.ring

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(str(s) for s in self.ring.symbols)

    @property
    def terms(self) -> Dict[Tuple[int, ...], Fraction]:
        return {tuple(m): to_fraction(c) for m, c in self.element.items()}

    def is_zero(self) -> bool:
        return not self.element

    def total_degree(self) -> int:
        if self.is_zero():
            return 0
        return max(sum(m) for m in self.element.keys())

    def __len__(self) -> int:
        return len(self.element)

    def set_variables(self, variables: Sequence[str]) -> "MultiPoly":
        """Re-embed into QQ[variables]; every current variable must be kept."""
        missing = [v for v in self.variables if v not in variables]
        if missing:
            raise ValueError(f"Variables {missing} not in target list {list(variables)}")
        return MultiPoly(self.element.set_ring(get_ring(tuple(variables))))

    def _unify(self, other: Any) -> Tuple[PolyElement, PolyElement]:
        if isinstance(other, (int, Fraction)):
            return self.element, self.ring.ground_new(_qq(other))
        if not isinstance(other, MultiPoly):
            return NotImplemented, NotImplemented
        if other.ring == self.ring:
            return self.element, other.element
        names = _merged_names(self.variables, other.variables)
        R = get_ring(names)
        return self.element.set_ring(R), other.element.set_ring(R)

    def __add__(self, other):
        p, q = self._unify(other)
        if p is NotImplemented:
            return NotImplemented
        return MultiPoly(p + q)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        p, q = self._unify(other)
        if p is NotImplemented:
            return NotImplemented
        return MultiPoly(p - q)

    def __rsub__(self, other):
        p, q = self._unify(other)
        if p is NotImplemented:
            return NotImplemented
        return MultiPoly(q - p)

    def __mul__(self, other):
        p, q = self._unify(other)
        if p is NotImplemented:
            return NotImplemented
        return MultiPoly(p * q)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return MultiPoly(-self.element)

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError("Polynomials support non-negative integer powers only")
        return MultiPoly(self.element ** exponent)

    def __eq__(self, other):
        p, q = self._unify(other)
        if p is NotImplemented:
            return NotImplemented
        return not (p - q)

    def __hash__(self):
        return hash((self.variables, frozenset(self.element.items())))

    def diff(self, var: str, order: int = 1) -> "MultiPoly":
        return poly_diff(self, var, order)

    def evaluate(self, assignment: Mapping[str, Scalar]) -> Fraction:
        return poly_eval_exact(self, assignment)

    def as_expr(self) -> sympy.Expr:
        return self.element.as_expr()

    def __repr__(self) -> str:
        return f"MultiPoly({self.element.as_expr()})"


class RatFn:
    """Quotient of two polynomials over a common variable list.

    Equality is decided by cross-multiplication and expansion. Arithmetic
    cancels common factors of intermediate results when ``cancel`` is set,
    which only bounds expression growth and never decides equality.
    """

    __slots__ = ("_num", "_den")

    cancel = True

    def __init__(self, num: Union[MultiPoly, PolyElement], den: Union[MultiPoly, PolyElement, None] = None):
        num_el = num.element if isinstance(num, MultiPoly) else num
        if den is None:
            den_el = num_el.ring.one
        else:
            den_el = den.element if isinstance(den, MultiPoly) else den
            if den_el.ring != num_el.ring:
                names = _merged_names(
                    [str(s) for s in num_el.ring.symbols],
                    [str(s) for s in den_el.ring.symbols],
                )
                R = get_ring(names)
                num_el, den_el = num_el.set_ring(R), den_el.set_ring(R)
        if not den_el:
            raise ZeroDivisionError("Rational function with zero denominator")
        self._num = num_el
        self._den = den_el

    @classmethod
    def _make(cls, num: PolyElement, den: PolyElement) -> "RatFn":
        if not den:
            raise ZeroDivisionError("Rational function with zero denominator")
        if not num:
            return cls(num.ring.zero, num.ring.one)
        if cls.cancel and den != den.ring.one:
            num, den = num.cancel(den)
        return cls(num, den)

    @classmethod
    def variable(cls, name: str, variables: Sequence[str]) -> "RatFn":
        return cls(MultiPoly.variable(name, variables))

    @classmethod
    def constant(cls, value: Scalar, variables: Sequence[str] = ()) -> "RatFn":
        return cls(MultiPoly.constant(value, variables))

    @classmethod
    def from_sympy(cls, expr: sympy.Expr, variables: Optional[Sequence[str]] = None) -> "RatFn":
        """Walk a sympy expression into a rational function."""
        if variables is None:
            variables = sorted(str(s) for s in expr.free_symbols)
        R = get_ring(tuple(variables))
        gens = {name: cls(g) for name, g in zip(variables, R.gens)}

        def leaf(symbol: sympy.Symbol) -> "RatFn":
            try:
                return gens[str(symbol)]
            except KeyError as e:
                raise ValueError(f"Symbol {symbol} not among {list(variables)}") from e

        return evaluate_expression(expr, leaf, lambda q: cls(R.ground_new(_qq(q))))

    @property
    def num(self) -> MultiPoly:
        return MultiPoly(self._num)

    @property
    def den(self) -> MultiPoly:
        return MultiPoly(self._den)

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(str(s) for s in self._num.ring.symbols)

    def is_zero(self) -> bool:
        return not self._num

    def is_constant(self) -> bool:
        return self._num.is_ground and self._den.is_ground

    def _coerce(self, other: Any) -> Tuple["RatFn", "RatFn"]:
        if isinstance(other, RatFn):
            if other._num.ring == self._num.ring:
                return self, other
            names = _merged_names(self.variables, other.variables)
            R = get_ring(names)
            return (
                RatFn(self._num.set_ring(R), self._den.set_ring(R)),
                RatFn(other._num.set_ring(R), other._den.set_ring(R)),
            )
        if isinstance(other, MultiPoly):
            return self._coerce(RatFn(other))
        if isinstance(other, (int, Fraction)):
            R = self._num.ring
            return self, RatFn(R.ground_new(_qq(other)), R.one)
        return NotImplemented, NotImplemented

    def __add__(self, other):
        f, g = self._coerce(other)
        if f is NotImplemented:
            return NotImplemented
        if f._den == g._den:
            return RatFn._make(f._num + g._num, f._den)
        return RatFn._make(f._num * g._den + g._num * f._den, f._den * g._den)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return RatFn(-self._num, self._den)

    def __sub__(self, other):
        f, g = self._coerce(other)
        if f is NotImplemented:
            return NotImplemented
        return f + (-g)

    def __rsub__(self, other):
        f, g = self._coerce(other)
        if f is NotImplemented:
            return NotImplemented
        return g + (-f)

    def __mul__(self, other):
        f, g = self._coerce(other)
        if f is NotImplemented:
            return NotImplemented
        return RatFn._make(f._num * g._num, f._den * g._den)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        f, g = self._coerce(other)
        if f is NotImplemented:
            return NotImplemented
        if not g._num:
            raise ZeroDivisionError("Division by the zero rational function")
        return RatFn._make(f._num * g._den, f._den * g._num)

    def __rtruediv__(self, other):
        f, g = self._coerce(other)
        if f is NotImplemented:
            return NotImplemented
        return g / f

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int):
            raise ValueError("Rational functions support integer powers only")
        if exponent < 0:
            if not self._num:
                raise ZeroDivisionError("Negative power of the zero rational function")
            return RatFn(self._den ** (-exponent), self._num ** (-exponent))
        return RatFn(self._num ** exponent, self._den ** exponent)

    def __eq__(self, other):
        f, g = self._coerce(other)
        if f is NotImplemented:
            return NotImplemented
        return ratfn_equal(f, g)

    __hash__ = None

    def diff(self, var: str, order: int = 1) -> "RatFn":
        """Exact partial derivative by the quotient rule."""
        if var not in self.variables:
            raise ValueError(f"Unknown variable {var!r}; have {list(self.variables)}")
        x = self._num.ring.gens[self.variables.index(var)]
        result = self
        for _ in range(order):
            n, d = result._num, result._den
            result = RatFn._make(n.diff(x) * d - n * d.diff(x), d * d)
        return result

    def evaluate(self, assignment: Mapping[str, Scalar]) -> Fraction:
        return poly_eval_exact(self, assignment)

    def as_expr(self) -> sympy.Expr:
        return self._num.as_expr() / self._den.as_expr()

    def __repr__(self) -> str:
        return f"RatFn(({self._num.as_expr()}) / ({self._den.as_expr()}))"


def poly_arith(p: MultiPoly, q: MultiPoly, kind: str) -> MultiPoly:
    """Exact add, sub or mul of two polynomials with name-based unification.

    Args:
        p: Left operand
        q: Right operand
        kind: One of "add", "sub", "mul"

    Returns:
        The exact result with zero terms pruned

    Example:
        >>> x = MultiPoly.variable("x", ["x"])
        >>> poly_arith(x, x, "mul") == x ** 2
        True
    """
    if kind == "add":
        return p + q
    if kind == "sub":
        return p - q
    if kind == "mul":
        return p * q
    raise ValueError(f"Unknown polynomial operation: {kind}")


def poly_diff(p: MultiPoly, var: str, order: int = 1) -> MultiPoly:
    """Exact partial derivative of the requested order.

    Raises:
        ValueError: If var is not one of p's variables or order is negative
    """
    if var not in p.variables:
        raise ValueError(f"Unknown variable {var!r}; have {list(p.variables)}")
    if order < 0:
        raise ValueError("Derivative order must be non-negative")
    x = p.ring.gens[p.variables.index(var)]
    element = p.element
    for _ in range(order):
        element = element.diff(x)
    return MultiPoly(element)


def _eval_element(element: PolyElement, names: Sequence[str], assignment: Mapping[str, Scalar]) -> Fraction:
    missing = [n for n, used in zip(names, _used_variables(element)) if used and n not in assignment]
    if missing:
        raise ValueError(f"Assignment does not cover variables {missing}")
    values = [to_fraction(assignment[n]) if n in assignment else Fraction(0) for n in names]
    total = Fraction(0)
    for monom, coeff in element.items():
        term = to_fraction(coeff)
        for value, exp in zip(values, monom):
            if exp:
                term *= value ** exp
        total += term
    return total


def _used_variables(element: PolyElement) -> List[bool]:
    used = [False] * element.ring.ngens
    for monom in element.keys():
        for i, exp in enumerate(monom):
            if exp:
                used[i] = True
    return used


def poly_eval_exact(p: Union[MultiPoly, RatFn], assignment: Mapping[str, Scalar]) -> Fraction:
    """Evaluate a polynomial or rational function at an exact rational point.

    Raises:
        ValueError: If the assignment misses a variable that occurs in p
        ZeroDivisionError: If a rational function's denominator vanishes
    """
    if isinstance(p, MultiPoly):
        return _eval_element(p.element, p.variables, assignment)
    num = _eval_element(p._num, p.variables, assignment)
    den = _eval_element(p._den, p.variables, assignment)
    if den == 0:
        point = {k: str(v) for k, v in assignment.items()}
        raise ZeroDivisionError(f"Denominator vanishes at {point}")
    return num / den


def ratfn_equal(f: RatFn, g: RatFn) -> bool:
    """Decide f == g by expanding f.num*g.den - g.num*f.den."""
    if not isinstance(f, RatFn):
        f = RatFn(f) if isinstance(f, MultiPoly) else f
    if not isinstance(g, RatFn):
        g = RatFn(g) if isinstance(g, MultiPoly) else g
    f, g = f._coerce(g)
    return not (f._num * g._den - g._num * f._den)


def monomial_integral_unit_triangle(p: int, q: int) -> Fraction:
    """Integral of x^p y^q over the triangle (0,0), (1,0), (0,1)."""
    if p < 0 or q < 0:
        raise ValueError("Exponents must be non-negative")
    return Fraction(math.factorial(p) * math.factorial(q), math.factorial(p + q + 2))


Coordinate = Union[int, Fraction, MultiPoly]
Point = Tuple[Coordinate, Coordinate]


def _as_poly(value: Coordinate, names: Sequence[str]) -> PolyElement:
    R = get_ring(tuple(names))
    if isinstance(value, MultiPoly):
        return value.element.set_ring(R)
    return R.ground_new(_qq(value))


def _point_names(points: Iterable[Point]) -> List[str]:
    names: List[str] = []
    for point in points:
        for c in point:
            if isinstance(c, MultiPoly):
                names.extend(v for v in c.variables if v not in names)
    return names


def _pullback(
    u: MultiPoly,
    origin: Point,
    directions: Sequence[Point],
    params: Sequence[str],
    x: str,
    y: str,
) -> Tuple[PolyElement, Tuple[str, ...]]:
    names = list(u.variables)
    for extra in _point_names([origin, *directions]):
        if extra not in names:
            names.append(extra)
    for name in params:
        if name in names:
            raise ValueError(f"Parameter name {name!r} clashes with a polynomial variable")
    names.extend(params)
    names = tuple(names)
    R = get_ring(names)
    X = _as_poly(origin[0], names)
    Y = _as_poly(origin[1], names)
    for name, (dx, dy) in zip(params, directions):
        t = R.gens[names.index(name)]
        X += _as_poly(dx, names) * t
        Y += _as_poly(dy, names) * t
    element = u.element.set_ring(R)
    replacements = []
    if x in names:
        replacements.append((R.gens[names.index(x)], X))
    if y in names:
        replacements.append((R.gens[names.index(y)], Y))
    if replacements:
        element = element.compose(replacements)
    return element, names


def _drop_params(element: PolyElement, names: Tuple[str, ...], params: Sequence[str], weight: Callable[[Tuple[int, ...]], Fraction]) -> MultiPoly:
    keep = tuple(n for n in names if n not in params)
    keep_idx = [names.index(n) for n in keep]
    param_idx = [names.index(p) for p in params]
    R = get_ring(keep)
    terms: Dict[Tuple[int, ...], Any] = {}
    for monom, coeff in element.items():
        w = weight(tuple(monom[i] for i in param_idx))
        _accumulate(terms, tuple(monom[i] for i in keep_idx), coeff * _qq(w))
    return MultiPoly(R.from_dict({m: c for m, c in terms.items() if c}))


def _collapse(poly: MultiPoly) -> Union[Fraction, MultiPoly]:
    used = _used_variables(poly.element)
    if not any(used):
        return to_fraction(poly.element.coeff(1)) if poly.element else Fraction(0)
    return poly


def integrate_poly_over_triangle(
    u: MultiPoly,
    tri: Sequence[Point],
    x: str = "x",
    y: str = "y",
) -> Union[Fraction, MultiPoly]:
    """Exact integral of u over a triangle by affine pullback.

    The vertices may be rational or polynomial in parameters; in the latter
    case the result is a polynomial in those parameters and the vertices
    are taken to be counter-clockwise.

    Args:
        u: Polynomial in x, y (other variables are carried along)
        tri: Three vertices
        x: Name of the abscissa variable
        y: Name of the ordinate variable

    Returns:
        The integral as a Fraction when it is a constant, else a MultiPoly

    Raises:
        ValueError: If the triangle has zero area
    """
    p1, p2, p3 = tri
    e1 = (_sub(p2[0], p1[0]), _sub(p2[1], p1[1]))
    e2 = (_sub(p3[0], p1[0]), _sub(p3[1], p1[1]))
    det = _sub(_mul(e1[0], e2[1]), _mul(e1[1], e2[0]))
    if isinstance(det, MultiPoly):
        if det.is_zero():
            raise ValueError("Degenerate (zero-area) triangle")
        jac = det
    else:
        if det == 0:
            raise ValueError("Degenerate (zero-area) triangle")
        jac = abs(det)
    params = ("_s", "_t")
    element, names = _pullback(u, p1, (e1, e2), params, x, y)
    reduced = _drop_params(element, names, params, lambda m: monomial_integral_unit_triangle(*m))
    result = reduced * jac
    return _collapse(result)


def integrate_poly_over_segment(
    u: MultiPoly,
    start: Point,
    end: Point,
    x: str = "x",
    y: str = "y",
) -> Union[Fraction, MultiPoly]:
    """Exact parameter integral of u(start + t(end - start)) over t in [0, 1].

    This is the mean value of u along the segment.
    """
    direction = (_sub(end[0], start[0]), _sub(end[1], start[1]))
    params = ("_t",)
    element, names = _pullback(u, start, (direction,), params, x, y)
    reduced = _drop_params(element, names, params, lambda m: Fraction(1, m[0] + 1))
    return _collapse(reduced)


def edge_flux(
    u: MultiPoly,
    start: Point,
    end: Point,
    x: str = "x",
    y: str = "y",
) -> Union[Fraction, MultiPoly]:
    """Exact outward normal flux of grad u through a counter-clockwise edge."""
    dx = _sub(end[0], start[0])
    dy = _sub(end[1], start[1])
    ux = u.diff(x) if x in u.variables else u * 0
    uy = u.diff(y) if y in u.variables else u * 0
    integrand = ux * dy - uy * dx
    return integrate_poly_over_segment(integrand, start, end, x, y)


def _sub(p: Coordinate, q: Coordinate) -> Coordinate:
    if isinstance(p, MultiPoly) or isinstance(q, MultiPoly):
        return (p if isinstance(p, MultiPoly) else MultiPoly.constant(p)) - q
    return Fraction(p) - Fraction(q)


def _mul(p: Coordinate, q: Coordinate) -> Coordinate:
    if isinstance(p, MultiPoly) or isinstance(q, MultiPoly):
        return (p if isinstance(p, MultiPoly) else MultiPoly.constant(p)) * q
    return Fraction(p) * Fraction(q)


class QuadraticJet:
    """Second-order Taylor jet at the origin of the variables 0..m-1.

    Coefficients live in any exact field (Fraction or RatFn). Products drop
    terms of degree three and above and record that they did, so an exact
    quadratic form yields its exact Hessian and a flag that stays False.
    """

    __slots__ = ("const", "lin", "quad", "truncated")

    def __init__(self, const: Any, lin: Optional[Dict[int, Any]] = None,
                 quad: Optional[Dict[Tuple[int, int], Any]] = None, truncated: bool = False):
        self.const = const
        self.lin = lin or {}
        self.quad = quad or {}
        self.truncated = truncated

    @classmethod
    def variable(cls, index: int, one: Any) -> "QuadraticJet":
        return cls(one * 0, {index: one})

    def _coerce(self, other: Any) -> "QuadraticJet":
        if isinstance(other, QuadraticJet):
            return other
        return QuadraticJet(self.const * 0 + other)

    @staticmethod
    def _merge(a: Dict, b: Dict, sign: int) -> Dict:
        out = dict(a)
        for key, value in b.items():
            if key in out:
                s = out[key] + value if sign > 0 else out[key] - value
                if _is_zero(s):
                    del out[key]
                else:
                    out[key] = s
            else:
                out[key] = value if sign > 0 else -value
        return out

    def __add__(self, other):
        g = self._coerce(other)
        return QuadraticJet(self.const + g.const, self._merge(self.lin, g.lin, 1),
                            self._merge(self.quad, g.quad, 1), self.truncated or g.truncated)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return QuadraticJet(-self.const, {k: -v for k, v in self.lin.items()},
                            {k: -v for k, v in self.quad.items()}, self.truncated)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def is_constant(self) -> bool:
        return not self.lin and not self.quad

    def __mul__(self, other):
        g = self._coerce(other)
        if g.is_constant():
            return self._scale(g.const, g.truncated)
        if self.is_constant():
            return g._scale(self.const, self.truncated)
        const = self.const * g.const
        lin: Dict[int, Any] = {}
        for k, v in self.lin.items():
            _accumulate(lin, k, v * g.const)
        for k, v in g.lin.items():
            _accumulate(lin, k, v * self.const)
        quad: Dict[Tuple[int, int], Any] = {}
        for k, v in self.quad.items():
            _accumulate(quad, k, v * g.const)
        for k, v in g.quad.items():
            _accumulate(quad, k, v * self.const)
        for i, vi in self.lin.items():
            for j, vj in g.lin.items():
                _accumulate(quad, (i, j) if i <= j else (j, i), vi * vj)
        dropped = bool((self.lin and g.quad) or (self.quad and g.lin) or (self.quad and g.quad))
        return QuadraticJet(const, _prune(lin), _prune(quad),
                            self.truncated or g.truncated or dropped)

    def __rmul__(self, other):
        return self.__mul__(other)

    def _scale(self, c: Any, truncated: bool) -> "QuadraticJet":
        if _is_zero(c):
            return QuadraticJet(c, {}, {}, self.truncated or truncated)
        return QuadraticJet(self.const * c, {k: v * c for k, v in self.lin.items()},
                            {k: v * c for k, v in self.quad.items()}, self.truncated or truncated)

    def reciprocal(self) -> "QuadraticJet":
        if _is_zero(self.const):
            raise ZeroDivisionError("Jet with zero constant term has no reciprocal")
        inv = 1 / self.const
        if self.is_constant():
            return QuadraticJet(inv, {}, {}, self.truncated)
        # 1/(c + e) = (1/c)(1 - e/c + (e/c)^2) up to order two
        e = QuadraticJet(self.const * 0, self.lin, self.quad, self.truncated)._scale(inv, False)
        series = QuadraticJet(inv * 0 + 1) - e + e * e
        series.truncated = True
        return series._scale(inv, False)

    def __truediv__(self, other):
        g = self._coerce(other)
        if g.is_constant():
            return self._scale(1 / g.const, g.truncated)
        return self * g.reciprocal()

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int):
            raise ValueError("Jets support integer powers only")
        if exponent < 0:
            return self.reciprocal() ** (-exponent)
        result = QuadraticJet(self.const * 0 + 1)
        base = self
        while exponent:
            if exponent & 1:
                result = result * base
            exponent >>= 1
            if exponent:
                base = base * base
        return result

    def hessian_entry(self, i: int, j: int) -> Any:
        """Second partial derivative with respect to variables i and j."""
        if i == j:
            return 2 * self.quad.get((i, i), self.const * 0)
        key = (i, j) if i < j else (j, i)
        return self.quad.get(key, self.const * 0)

    def __repr__(self) -> str:
        return f"QuadraticJet(const={self.const!r}, lin={len(self.lin)}, quad={len(self.quad)})"


def _is_zero(value: Any) -> bool:
    if isinstance(value, RatFn):
        return value.is_zero()
    return value == 0


def _accumulate(target: Dict, key: Any, value: Any) -> None:
    if key in target:
        target[key] = target[key] + value
    else:
        target[key] = value


def _prune(d: Dict) -> Dict:
    return {k: v for k, v in d.items() if not _is_zero(v)}


def evaluate_expression(
    expr: sympy.Expr,
    leaf: Callable[[sympy.Symbol], Any],
    lift: Callable[[Fraction], Any],
) -> Any:
    """Evaluate a sympy expression tree in an arbitrary exact domain.

    Supports sums, products, integer powers, rationals and symbols. Shared
    subtrees are evaluated once.

    Raises:
        ValueError: For any other node type (functions, floats, radicals)
    """
    cache: Dict[sympy.Expr, Any] = {}

    def walk(node: sympy.Expr) -> Any:
        if node in cache:
            return cache[node]
        if node.is_Rational:
            value = lift(Fraction(int(node.p), int(node.q)))
        elif node.is_Symbol:
            value = leaf(node)
        elif node.is_Add:
            args = [walk(arg) for arg in node.args]
            value = args[0]
            for arg in args[1:]:
                value = value + arg
        elif node.is_Mul:
            args = [walk(arg) for arg in node.args]
            value = args[0]
            for arg in args[1:]:
                value = value * arg
        elif node.is_Pow and node.exp.is_Integer:
            base = walk(node.base)
            exponent = int(node.exp)
            if exponent < 0:
                value = lift(Fraction(1)) / (base ** (-exponent))
            else:
                value = base ** exponent
        else:
            raise ValueError(f"Unsupported expression node {type(node).__name__}: {node}")
        cache[node] = value
        return value

    return walk(sympy.sympify(expr))


def random_rational(rng: random.Random) -> Fraction:
    """Draw a rational with |numerator| <= 10^6 and denominator <= 2^16."""
    num = rng.randint(-SZ_MAX_NUMERATOR, SZ_MAX_NUMERATOR)
    den = rng.randint(1, SZ_MAX_DENOMINATOR)
    return Fraction(num, den)


def random_point(variables: Sequence[str], rng: random.Random) -> Dict[str, Fraction]:
    return {name: random_rational(rng) for name in variables}


def identity_at_random_points(
    f: Union[RatFn, MultiPoly],
    g: Union[RatFn, MultiPoly],
    trials: int,
    seed: int,
    max_redraws: int = 100,
) -> Tuple[bool, Optional[Dict[str, Fraction]]]:
    """Schwartz-Zippel cross-check of f == g at seeded random points.

    Points where either side has a pole are redrawn.

    Returns:
        (True, None) if all trials agree, else (False, offending point)
    """
    rng = random.Random(seed)
    variables = sorted(set(f.variables) | set(g.variables))
    for _ in range(trials):
        for _attempt in range(max_redraws):
            point = random_point(variables, rng)
            try:
                lhs = poly_eval_exact(f, point)
                rhs = poly_eval_exact(g, point)
            except ZeroDivisionError:
                continue
            break
        else:
            raise ArithmeticError("Could not draw a point away from the poles")
        if lhs != rhs:
            logger.error(f"Random-point identity check failed at {point}")
            return False, point
    return True, None


class SymRatMatrix:
    """Dense symmetric matrix with exact entries in a numpy object array.

    Entries are Fractions for assembled pencils and RatFn for symbolic
    local matrices; any exact field type with + - * works.
    """

    __slots__ = ("entries",)

    def __init__(self, entries: Any):
        array = np.array(entries, dtype=object)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise ValueError(f"Expected a square matrix, got shape {array.shape}")
        self.entries = array

    @classmethod
    def zeros(cls, order: int) -> "SymRatMatrix":
        array = np.empty((order, order), dtype=object)
        array.fill(Fraction(0))
        return cls(array)

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, key):
        return self.entries[key]

    def __eq__(self, other):
        if not isinstance(other, SymRatMatrix) or other.order != self.order:
            return NotImplemented
        return all(
            _is_zero(x - y) for x, y in zip(self.entries.flat, other.entries.flat)
        )

    __hash__ = None

    def is_symmetric(self) -> bool:
        n = self.order
        return all(
            _is_zero(self.entries[i, k] - self.entries[k, i])
            for i in range(n) for k in range(i + 1, n)
        )

    def quadratic_form(self, x: Sequence[Any]) -> Any:
        """Exact x^T M x."""
        vector = np.array(list(x), dtype=object)
        if vector.shape != (self.order,):
            raise ValueError(f"Vector of length {vector.shape} does not match order {self.order}")
        return vector.dot(self.entries.dot(vector))

    def shifted(self, lam: Any, other: "SymRatMatrix") -> "SymRatMatrix":
        """Exact lam * self - other."""
        if other.order != self.order:
            raise ValueError("Order mismatch")
        return SymRatMatrix(self.entries * lam - other.entries)

    def evaluate(self, assignment: Mapping[str, Scalar]) -> "SymRatMatrix":
        """Evaluate rational-function entries at an exact point."""
        out = np.empty(self.entries.shape, dtype=object)
        for index, value in np.ndenumerate(self.entries):
            out[index] = poly_eval_exact(value, assignment) if isinstance(value, (RatFn, MultiPoly)) else to_fraction(value)
        return SymRatMatrix(out)

    def to_float(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.entries], dtype=float)

    def to_strings(self) -> List[List[str]]:
        """Entries as 'p/q' strings."""
        return [[_format_fraction(to_fraction(v)) for v in row] for row in self.entries]

    def __repr__(self) -> str:
        return f"SymRatMatrix(order={self.order})"


def _format_fraction(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"
