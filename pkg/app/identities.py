"""Machine checks of the algebraic lemmas behind the closed-form bounds.

Every displayed equality is certified as an exact rational-function
identity: the difference of both sides is walked into a quotient of
sparse polynomials over QQ and its numerator must be the zero polynomial.
Displayed nonnegativity claims get a structural check (the rewrite is a
positive combination of factors known to be nonnegative on the region)
and a floating-point scan of the region.

The identities themselves are stored as small step scripts in
``data/identity_manifest.json``; its checksum is pinned below because a
transcription slip in a nineteen-digit coefficient is the likeliest way
for this module to go wrong.
"""

import json
import logging
import random
import re
import time
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import sympy
from joblib import Parallel, delayed
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from app.config import settings
from app.elements import (
    ALPHA_DOFS,
    BETA_DOFS,
    alpha_interpolant,
    beta_form_0,
    beta_form_1,
    beta_form_2,
    beta_interpolant,
    closed_form_alpha_parts,
    closed_form_beta_parts,
    h1_seminorm_squared,
    h2_seminorm_squared,
    symbolic_local_matrix,
)
from app.geometry import Triangle, l_expression
from app.schemas import (
    ConsistencyError,
    FormKind,
    IdentityCase,
    IdentityManifest,
    IdentityMethod,
    IdentityStatus,
    UnknownLemmaError,
)
from app.symbolic import (
    MultiPoly,
    QuadraticJet,
    RatFn,
    edge_flux,
    evaluate_expression,
    integrate_poly_over_segment,
    integrate_poly_over_triangle,
    ratfn_equal,
    to_fraction,
)
from app.utils import parse_rational, sha256_file, write_json_report

logger = logging.getLogger(__name__)

MANIFEST_PATH = Path(__file__).resolve().parent / "data" / "identity_manifest.json"
MANIFEST_SHA256 = "e198526232e10245f13195755823099e55c50d5c5b0507f5b2e7fc0377b14b13"

SUPPORTED_LEMMAS = (
    "3.2", "3.3", "5.1", "5.2",
    "14.1", "14.2", "14.3", "14.4", "14.5", "14.6",
    "14.7", "14.8", "14.9", "14.10", "14.11",
)

# Region scan
SCAN_POINTS = 200
SCAN_TOLERANCE = 1e-9

# Sign classes of the structural checker
UNKNOWN, NONNEGATIVE, POSITIVE = 0, 1, 2

# b > 0, c_k > 0 by definition; E > 0 by the 45b^3E/4 rewrite, and
# D = (E + c1 + c2 + c3)/48
POSITIVE_SYMBOLS = frozenset({"b", "bt", "c1", "c2", "c3", "D", "E"})
# d1 = 1 - a >= 0 and d2 = 1 - 2a >= 0 for a <= 1/2
NONNEGATIVE_SYMBOLS = frozenset({"a", "at", "d1", "d2"})
# stands in for a parenthesized region factor during the structural check
REGION_PLACEHOLDER = "region_factor_"

PSD3_SOUNDNESS_SAMPLES = 2000
PROJECTION_SAMPLES = 50
RANDOM_POINTS_14_9 = 3
RESIDUAL_PREVIEW = 500

IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
FLOAT_SAFE_INTEGER = 2 ** 53


@dataclass(frozen=True)
class Region:
    """Box 0 <= a_lo <= a <= a_hi, b_lo < b <= b_hi of admissible shapes."""

    a_lo: Fraction
    a_hi: Fraction
    b_lo: Fraction
    b_hi: Fraction


@dataclass(frozen=True)
class PairStep:
    lhs: str
    rhs: str
    lhs_expr: sympy.Expr
    rhs_expr: sympy.Expr


@dataclass(frozen=True)
class ScriptResult:
    """Values and claims collected by running one manifest script."""

    lemma_id: str
    description: str
    region: Region
    region_factors: Tuple[sympy.Expr, ...]
    symbols: Tuple[str, ...]
    values: Dict[str, Any]
    pairs: Tuple[PairStep, ...]
    nonneg: Tuple[Tuple[str, sympy.Expr], ...]
    hessians: Tuple[Tuple[sympy.Expr, sympy.Expr], ...]


def manifest_checksum() -> str:
    """Hex SHA-256 of the identity manifest file."""
    return sha256_file(MANIFEST_PATH)


def manifest_ok() -> bool:
    return manifest_checksum() == MANIFEST_SHA256


@lru_cache(maxsize=1)
def load_manifest() -> Dict[str, Any]:
    """Load the identity manifest after verifying its pinned checksum.

    Raises:
        ConsistencyError: If the file does not match the pinned digest
    """
    digest = manifest_checksum()
    if digest != MANIFEST_SHA256:
        raise ConsistencyError(
            f"Identity manifest checksum mismatch: expected {MANIFEST_SHA256}, got {digest}"
        )
    with open(MANIFEST_PATH, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    logger.debug(f"Loaded identity manifest with {len(manifest['lemmas'])} scripts")
    return manifest


def _l_function(j: int) -> Callable[[Any, Any], Any]:
    def function(a, b):
        return l_expression(j, sympy.sympify(a), sympy.sympify(b))
    return function


def _subs(expr: Any, old: Any, new: Any) -> sympy.Expr:
    return sympy.sympify(expr).subs(old, new)


def _namespace(symbols: Dict[str, sympy.Symbol]) -> Dict[str, Any]:
    namespace: Dict[str, Any] = {
        "diff": sympy.diff,
        "subs": _subs,
        "F_beta_0": beta_form_0,
        "F_beta_1": beta_form_1,
        "F_beta_2": beta_form_2,
    }
    for j in (1, 2, 3, 4):
        namespace[f"L{j}ab"] = _l_function(j)
    namespace.update(symbols)
    return namespace


def _parse(source: str, namespace: Dict[str, Any], declared: Iterable[sympy.Symbol]) -> sympy.Expr:
    expr = sympy.sympify(
        parse_expr(source, local_dict=dict(namespace), transformations=standard_transformations)
    )
    undeclared = expr.free_symbols - set(declared)
    if undeclared:
        names = sorted(str(s) for s in undeclared)
        raise ConsistencyError(f"Undeclared names {names} in {source[:80]!r}")
    return expr


def _region(entry: Dict[str, Any]) -> Region:
    a_lo, a_hi = (parse_rational(v) for v in entry["a"])
    b_lo, b_hi = (parse_rational(v) for v in entry["b"])
    return Region(a_lo, a_hi, b_lo, b_hi)


@lru_cache(maxsize=None)
def run_script(lemma_id: str) -> ScriptResult:
    """Run the step script of a lemma and collect its claims.

    Raises:
        UnknownLemmaError: If the manifest has no script for lemma_id
        ConsistencyError: For malformed steps or undeclared names
    """
    lemmas = load_manifest()["lemmas"]
    if lemma_id not in lemmas:
        raise UnknownLemmaError(lemma_id)
    entry = lemmas[lemma_id]
    symbols = {name: sympy.Symbol(name) for name in entry["symbols"]}
    declared = list(symbols.values())
    namespace = _namespace(symbols)
    values: Dict[str, Any] = {}
    pairs: List[PairStep] = []
    nonneg: List[Tuple[str, sympy.Expr]] = []
    hessians: List[Tuple[sympy.Expr, sympy.Expr]] = []

    for step in entry["steps"]:
        kind = step[0]
        if kind == "let":
            _, name, source = step
            values[name] = _parse(source, namespace, declared)
            namespace[name] = values[name]
        elif kind == "pair":
            _, lhs, rhs = step
            pairs.append(PairStep(lhs, rhs, values[lhs], values[rhs]))
        elif kind == "nonneg":
            source = step[1]
            nonneg.append((source, _parse(source, namespace, declared)))
        elif kind == "hessian":
            _, lhs, rhs = step
            hessians.append((values[lhs], values[rhs]))
        else:
            raise ConsistencyError(f"Unknown step kind {kind!r} in lemma {lemma_id}")

    return ScriptResult(
        lemma_id=lemma_id,
        description=entry.get("description", ""),
        region=_region(entry["region"]),
        region_factors=tuple(sympy.sympify(f) for f in entry["region_factors"]),
        symbols=tuple(entry["symbols"]),
        values=values,
        pairs=tuple(pairs),
        nonneg=tuple(nonneg),
        hessians=tuple(hessians),
    )


def certify_identity(lhs: sympy.Expr, rhs: sympy.Expr) -> Tuple[bool, Optional[str]]:
    """Decide lhs == rhs as rational functions by exact expansion.

    Returns:
        (True, None) on success, else (False, preview of the residual numerator)
    """
    difference = sympy.sympify(lhs) - sympy.sympify(rhs)
    names = sorted({str(s) for s in difference.free_symbols} | {"a", "b"})
    residual = RatFn.from_sympy(difference, names)
    if residual.is_zero():
        return True, None
    return False, str(residual.num.as_expr())[:RESIDUAL_PREVIEW]


def _is_region_factor(node: sympy.Expr, factors: Sequence[sympy.Expr]) -> bool:
    symbols = node.free_symbols
    return any(
        symbols <= factor.free_symbols and sympy.expand(node.doit() - factor) == 0
        for factor in factors
    )


def _paren_spans(source: str) -> List[Tuple[int, int]]:
    spans, stack = [], []
    for i, char in enumerate(source):
        if char == "(":
            stack.append(i)
        elif char == ")" and stack:
            spans.append((stack.pop(), i))
    return sorted(spans)


def _text_equals(text: str, factor: sympy.Expr) -> bool:
    local = {name: sympy.Symbol(name) for name in IDENTIFIER.findall(text)}
    try:
        expr = parse_expr(text, local_dict=local, transformations=standard_transformations)
    except (SyntaxError, TypeError, sympy.SympifyError):
        return False
    return sympy.expand(expr - factor) == 0


def _mask_region_factors(source: str, factors: Sequence[sympy.Expr]) -> str:
    """Replace parenthesized region factors by nonnegative placeholder symbols.

    Unevaluated parsing still flattens a sum nested in a sum, which would
    split a factor such as (1 - 100*b**2) into signed terms, so factors
    are recognized in the text before parsing.
    """
    if not factors:
        return source
    factor_names = [{str(s) for s in factor.free_symbols} for factor in factors]
    pieces: List[str] = []
    last = 0
    for start, end in _paren_spans(source):
        if start < last:
            continue
        # arguments of function calls keep their parentheses
        if start > 0 and (source[start - 1].isalnum() or source[start - 1] == "_"):
            continue
        content = source[start + 1:end]
        used = set(IDENTIFIER.findall(content))
        for k, factor in enumerate(factors):
            if used and used <= factor_names[k] and _text_equals(content, factor):
                pieces += [source[last:start], f" {REGION_PLACEHOLDER}{k} "]
                last = end + 1
                break
    pieces.append(source[last:])
    return "".join(pieces)


def _sign_class(node: sympy.Expr, factors: Sequence[sympy.Expr]) -> int:
    if node.is_Rational:
        return POSITIVE if node > 0 else (NONNEGATIVE if node == 0 else UNKNOWN)
    if node.is_Symbol:
        name = str(node)
        if name in POSITIVE_SYMBOLS:
            return POSITIVE
        if name in NONNEGATIVE_SYMBOLS or name.startswith(REGION_PLACEHOLDER):
            return NONNEGATIVE
        return UNKNOWN
    if node.is_Add:
        if _is_region_factor(node, factors):
            return NONNEGATIVE
        classes = [_sign_class(arg, factors) for arg in node.args]
        if UNKNOWN in classes:
            return UNKNOWN
        return POSITIVE if POSITIVE in classes else NONNEGATIVE
    if node.is_Mul:
        classes = [_sign_class(arg, factors) for arg in node.args]
        if UNKNOWN in classes:
            return UNKNOWN
        return POSITIVE if all(c == POSITIVE for c in classes) else NONNEGATIVE
    if node.is_Pow and node.exp.is_Integer:
        exponent = int(node.exp)
        if exponent == 0:
            return POSITIVE
        base = _sign_class(node.base, factors)
        if exponent < 0:
            return POSITIVE if base == POSITIVE else UNKNOWN
        if exponent % 2 == 0:
            return POSITIVE if base == POSITIVE else NONNEGATIVE
        return base
    return UNKNOWN


def structurally_nonnegative(source: str, region_factors: Sequence[Any] = ()) -> bool:
    """Check that an expression is a positive combination of nonnegative factors.

    The expression is parsed without evaluation so the check sees the
    rewrite as written. Leaves are positive rationals, the symbols known to
    be nonnegative on the region and the region factors (such as 1 - b);
    sums and products of those, even powers of anything and reciprocals of
    positive parts pass. No floating-point arithmetic is involved.
    """
    factors = [sympy.sympify(f) for f in region_factors]
    source = _mask_region_factors(source, factors)
    local = {name: sympy.Symbol(name) for name in IDENTIFIER.findall(source)}
    tree = parse_expr(source, local_dict=local, transformations=standard_transformations, evaluate=False)
    return _sign_class(tree, factors) != UNKNOWN


def _float_safe(expr: sympy.Expr) -> sympy.Expr:
    big = {i: sympy.Float(i, 30) for i in expr.atoms(sympy.Integer) if abs(i) > FLOAT_SAFE_INTEGER}
    return expr.xreplace(big) if big else expr


def positivity_scan(expr: sympy.Expr, region: Region, points: int = SCAN_POINTS) -> Tuple[bool, float]:
    """Scan expr on a points x points grid of the region.

    The b axis excludes its open lower end. Copies at, bt of the region
    variables are identified with a, b.

    Returns:
        (passed, minimum value found)
    """
    a, b = sympy.symbols("a b")
    expr = sympy.sympify(expr).subs({sympy.Symbol("at"): a, sympy.Symbol("bt"): b})
    function = sympy.lambdify((a, b), _float_safe(expr), modules="numpy")
    a_axis = np.linspace(float(region.a_lo), float(region.a_hi), points)
    b_axis = np.linspace(float(region.b_lo), float(region.b_hi), points + 1)[1:]
    A, B = np.meshgrid(a_axis, b_axis, indexing="ij")
    with np.errstate(all="ignore"):
        values = np.asarray(function(A, B), dtype=float) * np.ones_like(A)
    if not np.all(np.isfinite(values)):
        return False, float("nan")
    minimum = float(values.min())
    scale = max(1.0, float(np.abs(values).max()))
    return minimum >= -SCAN_TOLERANCE * scale, minimum


def _certify_script(script: ScriptResult) -> Tuple[int, List[str], Optional[str]]:
    """Certify the pairs and nonnegativity claims of a script.

    Returns:
        (number of certified claims, failure messages, first residual)
    """
    checked = 0
    failures: List[str] = []
    residual: Optional[str] = None
    for index, pair in enumerate(script.pairs, start=1):
        ok, preview = certify_identity(pair.lhs_expr, pair.rhs_expr)
        if ok:
            checked += 1
        else:
            failures.append(f"pair {index} ({pair.lhs} = {pair.rhs}) does not expand to zero")
            residual = residual or preview
    for index, (source, expr) in enumerate(script.nonneg, start=1):
        if not structurally_nonnegative(source, script.region_factors):
            failures.append(f"nonneg {index} is not structurally nonnegative")
            residual = residual or source[:RESIDUAL_PREVIEW]
            continue
        passed, minimum = positivity_scan(expr, script.region)
        if not passed:
            failures.append(f"nonneg {index} scan minimum {minimum:.3e}")
            residual = residual or source[:RESIDUAL_PREVIEW]
            continue
        checked += 1
    return checked, failures, residual


def _case(lemma_id: str, method: IdentityMethod, checked: int, failures: List[str],
          residual: Optional[str], detail: str = "") -> IdentityCase:
    if failures:
        return IdentityCase(
            lemma_id=lemma_id, method=method, status=IdentityStatus.FAILED,
            detail="; ".join(failures), residual=residual, checked=checked,
        )
    return IdentityCase(
        lemma_id=lemma_id, method=method, status=IdentityStatus.PASSED,
        detail=detail, checked=checked,
    )


def check_manifest_lemma(lemma_id: str) -> IdentityCase:
    """Certify every displayed equality and rewrite of a scripted lemma."""
    script = run_script(lemma_id)
    checked, failures, residual = _certify_script(script)
    detail = f"{len(script.pairs)} identities, {len(script.nonneg)} nonnegative rewrites"
    return _case(lemma_id, IdentityMethod.EXPAND, checked, failures, residual, detail)


def _dof_symbols(script: ScriptResult) -> List[sympy.Symbol]:
    return [sympy.Symbol(name) for name in script.symbols if name not in ("a", "b")]


def _random_shape_value(rng: random.Random, hi: Fraction) -> Fraction:
    den = rng.randint(1, 2 ** 16)
    return hi * Fraction(rng.randint(1, den), den)


def quadratic_identity_at_points(lhs: sympy.Expr, rhs: sympy.Expr, dofs: Sequence[sympy.Symbol],
                                 region: Region, points: int, seed: int) -> Optional[Dict[str, str]]:
    """Exact evaluation of lhs - rhs at seeded random rational points.

    Returns:
        None if every evaluation is zero, else the offending point
    """
    rng = random.Random(seed)
    difference = sympy.sympify(lhs) - sympy.sympify(rhs)
    for _ in range(points):
        point = {
            "a": region.a_lo + _random_shape_value(rng, region.a_hi - region.a_lo),
            "b": _random_shape_value(rng, region.b_hi),
        }
        for symbol in dofs:
            point[str(symbol)] = Fraction(rng.randint(-10**6, 10**6), rng.randint(1, 2 ** 16))
        value = evaluate_expression(difference, lambda s: point[str(s)], lambda q: q)
        if value != 0:
            return {name: str(v) for name, v in point.items()}
    return None


def quadratic_identity_by_hessian(lhs: sympy.Expr, rhs: sympy.Expr,
                                  dofs: Sequence[sympy.Symbol]) -> Tuple[int, Optional[str]]:
    """Certify a homogeneous quadratic identity through its exact Hessian.

    Both sides are evaluated on second-order jets in the dof variables
    whose coefficients are rational functions of (a, b). The difference
    must be exactly quadratic, vanish with its gradient at the zero dof
    vector, and have a zero Hessian entry for every pair of dofs.

    Returns:
        (number of certified entries, description of the first failure)
    """
    shape_names = ("a", "b")
    index = {str(s): i for i, s in enumerate(dofs)}
    one = RatFn.constant(1, shape_names)

    def leaf(symbol: sympy.Symbol) -> QuadraticJet:
        name = str(symbol)
        if name in index:
            return QuadraticJet.variable(index[name], one)
        return QuadraticJet(RatFn.variable(name, shape_names))

    def lift(q: Fraction) -> QuadraticJet:
        return QuadraticJet(RatFn.constant(q, shape_names))

    jet = evaluate_expression(sympy.sympify(lhs) - sympy.sympify(rhs), leaf, lift)
    if jet.truncated:
        return 0, "difference is not quadratic in the dofs"
    if not jet.const.is_zero() or any(not v.is_zero() for v in jet.lin.values()):
        return 0, "difference does not vanish to second order at zero dofs"
    checked = 1
    m = len(dofs)
    for p in range(m):
        for q in range(p, m):
            entry = jet.hessian_entry(p, q)
            if not entry.is_zero():
                return checked, f"Hessian entry ({dofs[p]}, {dofs[q]}) = {str(entry.num.as_expr())[:RESIDUAL_PREVIEW]}"
            checked += 1
    return checked, None


def check_lemma_14_9(full: bool = True, seed: int = settings.SEED) -> IdentityCase:
    """Certify the sum-of-squares decomposition of the C_4 quadratic form.

    The 14-variable identity H = H2 is never expanded whole. It is checked
    exactly at random rational points and, when ``full`` is set, through
    its 78 Hessian entries, each an identity in (a, b) alone.
    """
    script = run_script("14.9")
    checked, failures, residual = _certify_script(script)
    dofs = _dof_symbols(script)
    for lhs, rhs in script.hessians:
        point = quadratic_identity_at_points(lhs, rhs, dofs, script.region, RANDOM_POINTS_14_9, seed)
        if point is not None:
            failures.append("H - H2 is nonzero at a random point")
            residual = residual or json.dumps(point)
        else:
            checked += RANDOM_POINTS_14_9
        if full:
            entries, failure = quadratic_identity_by_hessian(lhs, rhs, dofs)
            checked += entries
            if failure:
                failures.append(failure)
                residual = residual or failure
    detail = "Hessian reduction over 12 dofs" if full else "random exact points only"
    return _case("14.9", IdentityMethod.HESSIAN_REDUCE_EXPAND, checked, failures, residual, detail)


def psd3_criterion(A1: Any, A2: Any, A3: Any, B1: Any, B2: Any, B3: Any) -> bool:
    """Sufficient condition for A1 v1^2 + A2 v2^2 + A3 v3^2 + 2(B1 v2 v3 + B2 v3 v1 + B3 v1 v2) >= 0.

    The hypotheses are checked exactly; the criterion can reject forms that
    are in fact semidefinite.
    """
    A1, A2, A3, B1, B2, B3 = (to_fraction(v) for v in (A1, A2, A3, B1, B2, B3))
    return (
        B1 * B2 * B3 >= 0
        and A3 > 0
        and A1 * B1 ** 2 + A2 * B2 ** 2 - 2 * B1 * B2 * B3 > 0
        and A1 * A2 * A3 + 2 * B1 * B2 * B3 - A1 * B1 ** 2 - A2 * B2 ** 2 - A3 * B3 ** 2 > 0
    )


def leading_minors(A1: Any, A2: Any, A3: Any, B1: Any, B2: Any, B3: Any) -> List[Fraction]:
    """Exact leading principal minors of [[A1, B3, B2], [B3, A2, B1], [B2, B1, A3]]."""
    values = [sympy.Rational(v.numerator, v.denominator) for v in map(to_fraction, (A1, A2, A3, B1, B2, B3))]
    A1, A2, A3, B1, B2, B3 = values
    matrix = sympy.Matrix([[A1, B3, B2], [B3, A2, B1], [B2, B1, A3]])
    return [to_fraction(matrix[:k, :k].det()) for k in (1, 2, 3)]


def psd3_soundness(samples: int = PSD3_SOUNDNESS_SAMPLES, seed: int = settings.SEED,
                   max_draws: Optional[int] = None) -> Tuple[int, Optional[Tuple[Fraction, ...]]]:
    """Check that inputs passing the criterion give positive definite matrices.

    Args:
        samples: Number of passing inputs to test
        seed: Seed of the sampler
        max_draws: Bound on the total draws (default 50 per sample)

    Returns:
        (number of passing inputs tested, first counterexample or None)
    """
    rng = random.Random(seed)
    max_draws = max_draws or 50 * samples
    tested = 0
    for _ in range(max_draws):
        if tested >= samples:
            break
        A = [Fraction(rng.randint(-200, 1000), 100) for _ in range(3)]
        B = [Fraction(rng.randint(-500, 500), 100) for _ in range(3)]
        if not psd3_criterion(*A, *B):
            continue
        tested += 1
        if any(m <= 0 for m in leading_minors(*A, *B)):
            logger.error(f"Semidefiniteness criterion accepted an indefinite form: {A}, {B}")
            return tested, tuple(A + B)
    return tested, None


def check_lemma_14_10(samples: int = PSD3_SOUNDNESS_SAMPLES, seed: int = settings.SEED) -> IdentityCase:
    tested, counterexample = psd3_soundness(samples, seed)
    failures = []
    residual = None
    if counterexample is not None:
        failures.append("criterion accepted a form with a nonpositive leading minor")
        residual = ", ".join(str(v) for v in counterexample)
    elif tested == 0:
        failures.append("no sample passed the criterion")
    return _case("14.10", IdentityMethod.EXACT_RANDOM_POINTS, tested, failures, residual,
                 f"{tested} accepted samples, all positive definite")


def check_lemma_14_11() -> IdentityCase:
    """Certify the four hypothesis identities of the C_4 semidefiniteness step."""
    script = run_script("14.11")
    checked, failures, residual = _certify_script(script)
    a, b = sympy.symbols("a b")
    point = {a: sympy.Rational(1, 4), b: sympy.Rational(1, 20)}
    grand = sympy.sympify(script.values["f"] - script.values["g"]).subs(point)
    if grand != 0:
        failures.append(f"grand identity differs by {grand} at (1/4, 1/20)")
    else:
        checked += 1
    coefficients = [to_fraction(script.values[name].subs(point))
                    for name in ("A1", "A2", "A3", "B1", "B2", "B3")]
    if psd3_criterion(*coefficients):
        checked += 1
    else:
        failures.append("criterion hypotheses fail at (1/4, 1/20)")
        residual = residual or ", ".join(str(c) for c in coefficients)
    return _case("14.11", IdentityMethod.EXPAND, checked, failures, residual,
                 f"{len(script.pairs)} identities, criterion holds at (1/4, 1/20)")


SHAPE_RING = ("x", "y", "a", "b", "h")


def _shape_polys() -> Tuple[MultiPoly, ...]:
    return tuple(MultiPoly.variable(name, SHAPE_RING) for name in SHAPE_RING)


def _as_poly(value: Any) -> MultiPoly:
    if isinstance(value, MultiPoly):
        return value.set_variables(SHAPE_RING)
    return MultiPoly.constant(value, SHAPE_RING)


def _value_at(u: MultiPoly, point: Tuple[Any, Any]) -> MultiPoly:
    u = _as_poly(u)
    gens = u.ring.gens
    replacements = [(gens[0], _as_poly(point[0]).element), (gens[1], _as_poly(point[1]).element)]
    return MultiPoly(u.element.compose(replacements))


def _matches(value: Any, expected: MultiPoly) -> bool:
    return (_as_poly(expected) - _as_poly(value)).is_zero()


def _unit(index: int, size: int) -> List[int]:
    return [int(k == index) for k in range(size)]


def _bilinear(kind: str, f: MultiPoly, g: MultiPoly) -> MultiPoly:
    if kind == "l2":
        return f * g
    if kind == "h1":
        return f.diff("x") * g.diff("x") + f.diff("y") * g.diff("y")
    fx, fy, gx, gy = f.diff("x"), f.diff("y"), g.diff("x"), g.diff("y")
    return fx.diff("x") * gx.diff("x") + 2 * fx.diff("y") * gx.diff("y") + fy.diff("y") * gy.diff("y")


FAMILIES = {
    "alpha": (closed_form_alpha_parts, ALPHA_DOFS, ((FormKind.ALPHA0, "l2"), (FormKind.ALPHA1, "h1"))),
    "beta": (closed_form_beta_parts, BETA_DOFS,
             ((FormKind.BETA0, "l2"), (FormKind.BETA1, "h1"), (FormKind.BETA2, "h2"))),
}


def _matching_failures(family: str, numerators: List[MultiPoly], Q: MultiPoly,
                       vertices: Tuple[Tuple[Any, Any], ...]) -> Tuple[int, List[str]]:
    p1, p2, p3 = vertices
    x, y, a, b, h = _shape_polys()
    edges = ((p2, p3), (p3, p1), (p1, p2))
    checked = 0
    failures: List[str] = []
    dofs = ALPHA_DOFS if family == "alpha" else BETA_DOFS
    for i, N in enumerate(numerators):
        if family == "alpha":
            functionals = [integrate_poly_over_segment(N, s, e) for s, e in edges]
            targets = [Q * int(i == k) for k in range(3)]
            functionals.append(integrate_poly_over_triangle(N, vertices))
            targets.append(Q * b * h ** 2 * Fraction(int(i == 3), 2))
        else:
            functionals = [_value_at(N, p) for p in vertices]
            functionals += [edge_flux(N, s, e) for s, e in edges]
            targets = [Q * int(i == k) for k in range(6)]
        for k, (value, target) in enumerate(zip(functionals, targets)):
            if _matches(value, target):
                checked += 1
            else:
                failures.append(f"{family} basis function {dofs[i]} fails condition {dofs[k]}")
    return checked, failures


def _norm_failures(family: str, numerators: List[MultiPoly], Q: MultiPoly,
                   vertices: Tuple[Tuple[Any, Any], ...]) -> Tuple[int, List[str]]:
    _, names, forms = FAMILIES[family]
    checked = 0
    failures: List[str] = []
    denominator = Q * Q
    for form, kind in forms:
        local = symbolic_local_matrix(form)
        for i in range(len(names)):
            for k in range(i, len(names)):
                gram = _as_poly(integrate_poly_over_triangle(_bilinear(kind, numerators[i], numerators[k]), vertices))
                if ratfn_equal(RatFn(gram, denominator), local[i, k]):
                    checked += 1
                else:
                    failures.append(f"{form.value} entry ({names[i]}, {names[k]}) differs from the exact norm")
    return checked, failures


def check_element_consistency(families: Sequence[str] = ("alpha", "beta")) -> IdentityCase:
    """Check the explicit interpolants against their dofs and local forms.

    On (0,0), (h,0), (ah,bh) with symbolic a, b, h, the closed-form basis
    functions must reproduce the unit dof vectors, and the exact norms of
    the interpolant must equal the local forms entry by entry.
    """
    x, y, a, b, h = _shape_polys()
    vertices = ((0, 0), (h, 0), (a * h, b * h))
    checked = 0
    failures: List[str] = []
    for family in families:
        parts, names, _ = FAMILIES[family]
        numerators = []
        Q = None
        for i in range(len(names)):
            numerator, Q = parts(a, b, h, *_unit(i, len(names)), x, y)
            numerators.append(_as_poly(numerator))
        Q = _as_poly(Q)
        count, errors = _matching_failures(family, numerators, Q, vertices)
        checked += count
        failures += errors
        count, errors = _norm_failures(family, numerators, Q, vertices)
        checked += count
        failures += errors
        logger.info(f"Element family {family}: {checked} conditions certified so far")
    lemma_id = "+".join({"alpha": "5.1", "beta": "5.2"}[f] for f in families)
    residual = failures[0] if failures else None
    return _case(lemma_id, IdentityMethod.HESSIAN_REDUCE_EXPAND, checked, failures, residual,
                 "matching conditions and local forms")


def _random_triangle(rng: random.Random) -> Triangle:
    while True:
        points = [(Fraction(rng.randint(-20, 20), rng.randint(1, 4)),
                   Fraction(rng.randint(-20, 20), rng.randint(1, 4))) for _ in range(3)]
        tri = Triangle.from_points(points)
        if not tri.is_degenerate():
            return tri


def _random_polynomial(rng: random.Random, degree: int = 4) -> MultiPoly:
    terms = {
        (px, py): Fraction(rng.randint(-9, 9), rng.randint(1, 5))
        for px in range(degree + 1) for py in range(degree + 1 - px)
    }
    return MultiPoly.from_terms(("x", "y"), terms)


def check_projection_orthogonality(lemma_id: str, samples: int = PROJECTION_SAMPLES,
                                   seed: int = settings.SEED) -> IdentityCase:
    """Pythagoras for the interpolation errors on random triangles.

    3.2: |u|_1^2 = |P_alpha u|_1^2 + |u - P_alpha u|_1^2.
    3.3: the same with the H2 seminorm and P_beta.
    """
    if lemma_id == "3.2":
        project, seminorm = alpha_interpolant, h1_seminorm_squared
    elif lemma_id == "3.3":
        project, seminorm = beta_interpolant, h2_seminorm_squared
    else:
        raise UnknownLemmaError(lemma_id)
    rng = random.Random(seed)
    for trial in range(samples):
        tri = _random_triangle(rng)
        u = _random_polynomial(rng)
        p = project(tri, u)
        if seminorm(p, tri) + seminorm(u - p, tri) != seminorm(u, tri):
            vertices = [tuple(str(c) for c in v) for v in tri.vertices]
            return _case(lemma_id, IdentityMethod.EXACT_RANDOM_POINTS, trial,
                         ["interpolation error is not orthogonal"], json.dumps(vertices))
    return _case(lemma_id, IdentityMethod.EXACT_RANDOM_POINTS, samples, [], None,
                 f"{samples} random triangles and quartics")


def check_lemma(lemma_id: str, seed: int = settings.SEED) -> IdentityCase:
    """Run the registered check of one lemma.

    Raises:
        UnknownLemmaError: If lemma_id is not supported
    """
    lemma_id = str(lemma_id)
    if lemma_id not in SUPPORTED_LEMMAS:
        raise UnknownLemmaError(lemma_id)
    logger.info(f"Checking lemma {lemma_id}")
    start = time.perf_counter()
    try:
        if lemma_id == "14.9":
            case = check_lemma_14_9(full=True, seed=seed)
        elif lemma_id == "14.10":
            case = check_lemma_14_10(seed=seed)
        elif lemma_id == "14.11":
            case = check_lemma_14_11()
        elif lemma_id.startswith("14."):
            case = check_manifest_lemma(lemma_id)
        elif lemma_id in ("5.1", "5.2"):
            case = check_element_consistency(("alpha",) if lemma_id == "5.1" else ("beta",))
        else:
            case = check_projection_orthogonality(lemma_id, seed=seed)
    except (ArithmeticError, ValueError) as e:
        logger.error(f"Lemma {lemma_id} check raised {type(e).__name__}: {e}")
        case = IdentityCase(
            lemma_id=lemma_id, method=IdentityMethod.EXPAND,
            status=IdentityStatus.FAILED, detail=f"{type(e).__name__}: {e}",
        )
    case.seconds = time.perf_counter() - start
    level = logging.INFO if case.status == IdentityStatus.PASSED else logging.ERROR
    logger.log(level, f"Lemma {lemma_id}: {case.status.value} ({case.checked} checks, {case.seconds:.1f}s)")
    return case


def run_identity_suite(lemma_ids: Optional[Sequence[str]] = None, n_jobs: int = 1,
                       seed: int = settings.SEED, output: Optional[Path] = None) -> IdentityManifest:
    """Check several lemmas in parallel and collect the results.

    Args:
        lemma_ids: Lemmas to check (default: all supported)
        n_jobs: Worker processes; each check is single-threaded
        seed: Seed of the random-point harnesses
        output: Optional JSON destination

    Returns:
        The identity manifest of this run
    """
    lemma_ids = list(lemma_ids or SUPPORTED_LEMMAS)
    unknown = [lemma for lemma in lemma_ids if lemma not in SUPPORTED_LEMMAS]
    if unknown:
        raise UnknownLemmaError(", ".join(unknown))
    cases = Parallel(n_jobs=n_jobs)(delayed(check_lemma)(lemma, seed) for lemma in lemma_ids)
    manifest = IdentityManifest(manifest_sha256=manifest_checksum(), seed=seed, cases=list(cases))
    if output is not None:
        write_json_report(manifest, output)
    return manifest
