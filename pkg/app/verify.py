"""Verified sweeps over the shape grids and the proof-chain bookkeeping.

A grid point is certified by assembling the exact pencil of C_j^(n) on
T_{a,b}, forming lambda*B - A for the rational threshold lambda of the
sweep, and proving positive definiteness of an interval enclosure. The
threshold folds in the refinement factor and the continuation factors that
carry the bound from the grid to the neighbouring shapes.
"""

import logging
import math
import platform
import time
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy
import sympy
from joblib import Parallel, delayed

from app.config import settings
from app.eigen import max_gen_eig
from app.geometry import (
    MAX_CONTINUATION_STEP,
    TriangleShape,
    continuation_factor,
    derivative_bound_check,
    l_constant,
    l_limit,
)
from app.interval import certify_eigen_bound
from app.mesh import SPACE_FOR_J, assemble
from app.schemas import (
    IdentityManifest,
    IdentityStatus,
    InvalidShapeError,
    PointResult,
    ProofChainStatus,
    ProofIngredient,
    SpaceKind,
    SweepConfig,
    SweepMode,
    SweepSummary,
    Verdict,
    VerificationReport,
)
from app.utils import (
    SWEEP_CSV_COLUMNS,
    append_checkpoint,
    checkpoint_keys,
    format_rational,
    load_checkpoint,
    parse_rational,
    records_to_csv,
    write_json_report,
)

logger = logging.getLogger(__name__)

# Height recurrence of the main grid
GRID_LEVELS = 119
Y_START = 1000
Y_GROWTH = Fraction(51, 50)
X_DIVISOR = 40

# Small-height sweep: a = l/500, b = 1/10
SMALL_HEIGHT_B = Fraction(1, 10)
SMALL_HEIGHT_STEPS = 500
SMALL_HEIGHT_L_MAX = 250
SMALL_HEIGHT_J = (1, 2, 3)

REFERENCE_N = 20
IDENTITY_REPORT_NAME = "identities.json"
ALL_J = (1, 2, 3, 4)

STATUS_REVERIFIED = "re-verified"
STATUS_PENDING = "pending"
STATUS_INHERITED = "inherited"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class GridPoint:
    """One shape of a sweep grid; k is None on the small-height grid."""

    k: Optional[int]
    l: int
    a: Fraction
    b: Fraction

    @property
    def shape(self) -> TriangleShape:
        return TriangleShape(self.a, self.b)


@dataclass(frozen=True)
class GridLevel:
    k: int
    y: int
    x: int
    b: Fraction

    def a(self, l: int) -> Fraction:
        return Fraction(l, 2 * self.x)

    def points(self) -> List[GridPoint]:
        return [GridPoint(self.k, l, self.a(l), self.b) for l in range(self.x + 1)]


@dataclass(frozen=True)
class SweepGrid:
    """Exact grid (k, y_k, b_k, l, x_k, a_kl) of the main sweep."""

    levels: Tuple[GridLevel, ...]

    def __len__(self) -> int:
        return len(self.levels)

    def level(self, k: int) -> GridLevel:
        if not 1 <= k <= len(self.levels):
            raise InvalidShapeError(f"Grid level k must lie in 1..{len(self.levels)}, got {k}")
        return self.levels[k - 1]

    @property
    def total_points(self) -> int:
        return sum(level.x + 1 for level in self.levels)

    def points(self, k: Optional[Sequence[int]] = None, l: Optional[Sequence[int]] = None) -> List[GridPoint]:
        """Points of the selected levels; l=None selects every index of a level.

        Raises:
            InvalidShapeError: For a level or index outside the grid
        """
        ks = list(k) if k else [level.k for level in self.levels]
        selected: List[GridPoint] = []
        for index in ks:
            level = self.level(index)
            if l is None:
                selected.extend(level.points())
                continue
            for li in l:
                if not 0 <= li <= level.x:
                    raise InvalidShapeError(f"Index l={li} outside 0..{level.x} on level k={index}")
                selected.append(GridPoint(level.k, li, level.a(li), level.b))
        return selected

    def to_frame(self, j: Sequence[int] = ()) -> pd.DataFrame:
        """Flat table of the grid with exact 'p/q' columns and L_j values."""
        rows = []
        for level in self.levels:
            for point in level.points():
                row = {
                    "k": level.k, "y": level.y, "x": level.x, "l": point.l,
                    "a": format_rational(point.a), "b": format_rational(point.b),
                    "a_float": float(point.a), "b_float": float(point.b),
                }
                for index in j:
                    row[f"L{index}"] = float(l_constant(index, point.shape))
                rows.append(row)
        return pd.DataFrame(rows)


@lru_cache(maxsize=4)
def main_grid(levels: int = GRID_LEVELS) -> SweepGrid:
    """Build the main grid: y_1 = 1000, y_{k+1} = floor(51 y_k / 50), x_k = ceil(y_k / 40)."""
    result = []
    y = Y_START
    for k in range(1, levels + 1):
        x = -(-y // X_DIVISOR)
        result.append(GridLevel(k=k, y=y, x=x, b=Fraction(1000, y)))
        y = math.floor(Y_GROWTH * y)
    grid = SweepGrid(tuple(result))
    logger.debug(f"Main grid: {len(grid)} levels, {grid.total_points} points")
    return grid


def small_height_grid(l: Optional[Sequence[int]] = None) -> List[GridPoint]:
    """Small-height grid a_l = l/500 (0 <= l <= 250) at b = 1/10."""
    indices = range(SMALL_HEIGHT_L_MAX + 1) if l is None else l
    points = []
    for li in indices:
        if not 0 <= li <= SMALL_HEIGHT_L_MAX:
            raise InvalidShapeError(f"Index l={li} outside 0..{SMALL_HEIGHT_L_MAX}")
        points.append(GridPoint(None, li, Fraction(li, SMALL_HEIGHT_STEPS), SMALL_HEIGHT_B))
    return points


@dataclass(frozen=True)
class SpacingReport:
    """Largest relative steps of the grid in b and in a."""

    max_b_ratio: Fraction
    max_a_ratio: Fraction
    last_b: Fraction

    @property
    def holds(self) -> bool:
        return (
            self.max_b_ratio <= MAX_CONTINUATION_STEP
            and self.max_a_ratio <= MAX_CONTINUATION_STEP
            and self.last_b < SMALL_HEIGHT_B
        )


def grid_spacing_check(grid: Optional[SweepGrid] = None) -> SpacingReport:
    """Exact spacing ratios: (b_k - b_{k+1})/b_{k+1} and (a_{k,l+1} - a_{kl})/b_k."""
    grid = grid or main_grid()
    levels = grid.levels
    b_ratio = max(
        (levels[i].b - levels[i + 1].b) / levels[i + 1].b for i in range(len(levels) - 1)
    )
    a_ratio = max(Fraction(1, 2 * level.x) / level.b for level in levels)
    return SpacingReport(max_b_ratio=b_ratio, max_a_ratio=a_ratio, last_b=levels[-1].b)


def refinement_factor(j: int, n: int) -> Fraction:
    """(n^2 - 1)/n^2 for j = 1, 2 and (n^4 - 1)/n^4 for j = 3."""
    power = 4 if j == 3 else 2
    return Fraction(n ** power - 1, n ** power)


def lambda_threshold(j: int, shape: TriangleShape, mode: Union[SweepMode, str], n: int = REFERENCE_N) -> Fraction:
    """Exact shift lambda such that a certificate for it proves the sweep inequality.

    Raises:
        InvalidShapeError: For j = 4 on the small-height sweep, or n < 2
    """
    mode = SweepMode(mode)
    if n < 2:
        raise InvalidShapeError(f"Refinement level must be at least 2, got {n}")
    if j not in ALL_J:
        raise InvalidShapeError(f"Constant index must be 1..4, got {j}")
    step = MAX_CONTINUATION_STEP
    if mode == SweepMode.THM62:
        if j not in SMALL_HEIGHT_J:
            raise InvalidShapeError(f"The small-height sweep covers j = 1, 2, 3, got {j}")
        return l_limit(j, shape.a) * refinement_factor(j, n) / continuation_factor(j, "a", step)
    factors = continuation_factor(j, "a", step) * continuation_factor(j, "b", step)
    if j == 4:
        return l_constant(4, shape) / factors - l_constant(2, shape) / n ** 2
    return l_constant(j, shape) * refinement_factor(j, n) / factors


def _implication(j: int, point: GridPoint) -> str:
    return (
        f"C_{j}(T_(a,b)) < K_{j}(T_(a,b)) for all 0 < b <= {format_rational(SMALL_HEIGHT_B)} "
        f"at a = {format_rational(point.a)}"
    )


def verify_point(
    j: int,
    n: int,
    shape: TriangleShape,
    mode: Union[SweepMode, str] = SweepMode.THM61,
    lambda_scale: Fraction = Fraction(1),
    k: Optional[int] = None,
    l: int = 0,
    estimate: bool = False,
) -> PointResult:
    """Certify lambda*B - A > 0 for the pencil of C_j^(n) on one shape.

    A float estimate of the largest eigenvalue is computed when the
    certificate fails (or when asked for), so certificate failures can be
    told apart from falsifications.
    """
    mode = SweepMode(mode)
    start = time.perf_counter()
    lam = lambda_threshold(j, shape, mode, n) * Fraction(lambda_scale)
    pencil = assemble(SPACE_FOR_J[j], j, n, shape)
    certified = certify_eigen_bound(pencil, lam)
    value = None
    if estimate or not certified:
        value = max_gen_eig(pencil.A, pencil.B).value
    if certified and value is not None and value >= float(lam):
        logger.error(f"Certified lambda {float(lam):.10g} is below the float estimate {value:.10g}")
    point = GridPoint(k, l, shape.a, shape.b)
    verdict = Verdict.VERIFIED if certified else Verdict.NOT_CERTIFIED
    if not certified:
        logger.error(f"j={j} n={n} (a, b)=({shape.a}, {shape.b}): not certified at lambda={float(lam):.10g}")
    return PointResult(
        k=k,
        l=l,
        a=format_rational(shape.a),
        b=format_rational(shape.b),
        j=j,
        n=n,
        lambda_=format_rational(lam),
        verdict=verdict,
        falsified=bool(not certified and value is not None and value > float(lam)),
        estimate=value,
        implication=_implication(j, point) if certified and mode == SweepMode.THM62 else None,
        seconds=time.perf_counter() - start,
    )


def _verify_task(point: GridPoint, j: int, n: int, mode: SweepMode, scale: Fraction) -> PointResult:
    return verify_point(j, n, point.shape, mode, scale, k=point.k, l=point.l)


def sweep_points(config: SweepConfig) -> List[Tuple[GridPoint, int]]:
    """Work items (point, j) of a sweep slice in grid order.

    For the main grid an empty k list selects every level; l=None selects
    every index of each level and an empty l list selects nothing.

    Raises:
        InvalidShapeError: For selectors outside the grid or j outside the mode
    """
    js = sorted(set(config.j))
    if config.mode == SweepMode.THM62:
        if config.k:
            raise InvalidShapeError("The small-height sweep has no k levels")
        bad = [j for j in js if j not in SMALL_HEIGHT_J]
        points = small_height_grid(config.l)
    else:
        bad = [j for j in js if j not in ALL_J]
        points = main_grid().points(config.k, config.l)
    if bad:
        raise InvalidShapeError(f"Constant indices {bad} are not covered by {config.mode.value}")
    return [(point, j) for point in points for j in js]


def checkpoint_path(config: SweepConfig) -> Path:
    return Path(settings.CHECKPOINT_DIR) / f"{config.mode.value}_n{config.n}.jsonl"


def _versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sympy.__version__,
    }


def _sort_key(result: PointResult) -> Tuple[int, int, int]:
    return (result.k or 0, result.l, result.j)


def summarize(points: Iterable[PointResult]) -> SweepSummary:
    summary = SweepSummary()
    for point in points:
        summary.total += 1
        summary.seconds += point.seconds
        if point.verdict == Verdict.VERIFIED:
            summary.verified += 1
        else:
            summary.not_certified += 1
        if point.falsified:
            summary.falsified += 1
    return summary


def run_sweep(
    config: SweepConfig,
    resume: bool = False,
    checkpoint: Optional[Path] = None,
    output: Optional[Path] = None,
    csv_output: Optional[Path] = None,
    seed: int = settings.SEED,
) -> VerificationReport:
    """Certify every (point, j) of a sweep slice.

    Finished points are appended to a JSON-lines checkpoint as they
    arrive; with ``resume`` the keys already in the checkpoint are skipped
    and their stored verdicts reused.

    Args:
        config: Mode, n, j set, slice selectors and parallelism
        resume: Reuse the checkpoint of an interrupted run
        checkpoint: Checkpoint file (default CHECKPOINT_DIR/<mode>_n<n>.jsonl)
        output: Optional JSON report destination
        csv_output: Optional CSV export of the per-point table
        seed: Recorded in the report

    Returns:
        VerificationReport of the slice
    """
    scale = parse_rational(config.lambda_scale)
    config = config.model_copy(update={
        "deviates_from_reference": config.n != REFERENCE_N or scale != 1,
    })
    if config.deviates_from_reference:
        logger.warning(f"Sweep deviates from the reference setup: n={config.n}, lambda scale {scale}")

    items = sweep_points(config)
    checkpoint = Path(checkpoint) if checkpoint else checkpoint_path(config)
    done: List[PointResult] = []
    if resume:
        wanted = {(point.k, point.l, j) for point, j in items}
        records = [r for r in load_checkpoint(checkpoint) if (r.get("k"), int(r["l"]), int(r["j"])) in wanted]
        keys = checkpoint_keys(records)
        done = [PointResult.model_validate(r) for r in records]
        items = [(point, j) for point, j in items if (point.k, point.l, j) not in keys]
        logger.info(f"Resuming: {len(done)} points from {checkpoint}, {len(items)} to go")

    logger.info(f"Sweep {config.mode.value} n={config.n}: {len(items)} certifications on {config.n_jobs} workers")
    parallel = Parallel(
        n_jobs=config.n_jobs,
        return_as="generator",
        timeout=settings.POINT_TIMEOUT_SECONDS if config.n_jobs > 1 else None,
    )
    results = list(done)
    tasks = (delayed(_verify_task)(point, j, config.n, config.mode, scale) for point, j in items)
    for count, result in enumerate(parallel(tasks), start=1):
        append_checkpoint(checkpoint, result.model_dump(mode="json", by_alias=True))
        results.append(result)
        if count % 50 == 0:
            logger.info(f"{count}/{len(items)} certifications finished")

    results.sort(key=_sort_key)
    report = VerificationReport(
        config=config,
        points=results,
        summary=summarize(results),
        seed=seed,
        versions=_versions(),
    )
    logger.info(
        f"Sweep finished: {report.summary.verified}/{report.summary.total} verified, "
        f"{report.summary.falsified} falsified"
    )
    if output is not None:
        write_json_report(report, output)
    if csv_output is not None:
        records = [p.model_dump(mode="json", by_alias=True) for p in results]
        records_to_csv(records, csv_output, SWEEP_CSV_COLUMNS)
    return report


def _sweep_ingredient(name: str, mode: SweepMode, expected: int,
                      reports: Sequence[VerificationReport]) -> ProofIngredient:
    points = {
        (p.k, p.l, p.j): p
        for report in reports
        if report.config.mode == mode and not report.config.deviates_from_reference
        for p in report.points
    }
    verified = sum(p.verdict == Verdict.VERIFIED for p in points.values())
    failed = len(points) - verified
    detail = f"{verified}/{expected} certifications verified"
    if failed:
        return ProofIngredient(name=name, status=STATUS_FAILED, detail=f"{detail}, {failed} not certified")
    if verified >= expected:
        return ProofIngredient(name=name, status=STATUS_REVERIFIED, detail=detail)
    return ProofIngredient(name=name, status=STATUS_PENDING, detail=detail)


def _identity_ingredient(identities: Optional[IdentityManifest]) -> ProofIngredient:
    needed = ("14.9", "14.10", "14.11")
    name = "c4_small_height_identities"
    if identities is None:
        return ProofIngredient(name=name, status=STATUS_PENDING, detail="identity suite not run")
    cases = {case.lemma_id: case for case in identities.cases}
    missing = [lemma for lemma in needed if lemma not in cases]
    failed = [lemma for lemma in needed if lemma in cases and cases[lemma].status != IdentityStatus.PASSED]
    if failed:
        return ProofIngredient(name=name, status=STATUS_FAILED, detail=f"failed: {', '.join(failed)}")
    if missing:
        return ProofIngredient(name=name, status=STATUS_PENDING, detail=f"not run: {', '.join(missing)}")
    return ProofIngredient(name=name, status=STATUS_REVERIFIED, detail="sum-of-squares and criterion identities")


def _derivative_ingredient() -> ProofIngredient:
    grid = main_grid()
    samples = []
    for k in (1, 60, GRID_LEVELS):
        level = grid.level(k)
        samples += [(level.a(0), level.b), (level.a(level.x // 2), level.b), (level.a(level.x), level.b)]
    violations = sum(len(derivative_bound_check(j, samples).violations) for j in ALL_J)
    status = STATUS_FAILED if violations else STATUS_REVERIFIED
    return ProofIngredient(
        name="derivative_bounds",
        status=status,
        detail=f"relative derivative bounds of L_j at {len(samples)} grid shapes, {violations} violations",
    )


def _limit_ingredient() -> ProofIngredient:
    violations = 0
    for point in small_height_grid():
        for j in SMALL_HEIGHT_J:
            if not l_limit(j, point.a) < l_constant(j, point.shape):
                violations += 1
    return ProofIngredient(
        name="limit_below_l",
        status=STATUS_FAILED if violations else STATUS_REVERIFIED,
        detail=f"lim_(y->0) L_j(a, y) < L_j(a, 1/10) on the small-height grid, {violations} violations",
    )


SMALL_HEIGHT_SHAPES = tuple(
    TriangleShape(a, b)
    for a in (Fraction(0), Fraction(1, 4), Fraction(1, 2))
    for b in (Fraction(1, 10), Fraction(1, 20))
)


def c4_coarse_certificates(shapes: Sequence[TriangleShape] = SMALL_HEIGHT_SHAPES) -> List[bool]:
    """Certify C_4^(2)^2 < L_4 - L_2/4 on the V2 pencil with n = 2 at small heights."""
    results = []
    for shape in shapes:
        lam = l_constant(4, shape) - l_constant(2, shape) / 4
        results.append(certify_eigen_bound(assemble(SpaceKind.V2, 4, 2, shape), lam))
    return results


def proof_chain_status(
    reports: Sequence[VerificationReport] = (),
    identities: Optional[IdentityManifest] = None,
    coarse_certificates: bool = False,
) -> ProofChainStatus:
    """Which ingredients of the bound K_j have been re-verified locally.

    The grid spacing, the derivative bounds at sample shapes and the
    limit inequalities on the small-height grid are always re-checked;
    sweep and identity ingredients come from the given reports. Analytic
    ingredients are listed as inherited.
    """
    spacing = grid_spacing_check()
    grid = main_grid()
    ingredients = [
        ProofIngredient(
            name="grid_spacing",
            status=STATUS_REVERIFIED if spacing.holds else STATUS_FAILED,
            detail=(
                f"{len(grid)} levels, {grid.total_points} points, b-step {spacing.max_b_ratio}, "
                f"a-step {spacing.max_a_ratio}, b_last = {spacing.last_b}"
            ),
        ),
        ProofIngredient(
            name="region_cover",
            status=STATUS_REVERIFIED if spacing.last_b < SMALL_HEIGHT_B else STATUS_FAILED,
            detail=(
                f"b >= {spacing.last_b} by the main grid, 0 < b <= {SMALL_HEIGHT_B} by the small-height "
                "grid with monotonicity in height"
            ),
        ),
        _derivative_ingredient(),
        ProofIngredient(
            name="continuation_constants",
            status=STATUS_INHERITED,
            detail="factors 1 + c h^2 for h <= 1/50 from the analytic continuation argument",
        ),
        ProofIngredient(
            name="monotonicity_in_height",
            status=STATUS_INHERITED,
            detail="C_j(T_(a,b)) is nondecreasing under the height contraction",
        ),
        _limit_ingredient(),
        _sweep_ingredient("thm61_sweep", SweepMode.THM61, grid.total_points * len(ALL_J), reports),
        _sweep_ingredient("thm62_sweep", SweepMode.THM62, (SMALL_HEIGHT_L_MAX + 1) * len(SMALL_HEIGHT_J), reports),
        _identity_ingredient(identities),
    ]
    if coarse_certificates:
        results = c4_coarse_certificates()
        ingredients.append(ProofIngredient(
            name="c4_coarse_certificates",
            status=STATUS_REVERIFIED if all(results) else STATUS_FAILED,
            detail=f"{sum(results)}/{len(results)} V2 n=2 certificates at b <= 1/10",
        ))
    else:
        ingredients.append(ProofIngredient(
            name="c4_coarse_certificates", status=STATUS_PENDING, detail="not requested",
        ))

    statuses = {ingredient.status for ingredient in ingredients}
    if STATUS_FAILED in statuses:
        status = "failed"
    elif STATUS_PENDING in statuses:
        status = "partially re-verified; full sweep pending"
    else:
        status = "fully re-verified (modulo platform floating-point conformance)"
    logger.info(f"Proof chain: {status}")
    return ProofChainStatus(status=status, ingredients=ingredients)


def load_saved_runs(directory: Optional[Path] = None) -> Tuple[List[VerificationReport], Optional[IdentityManifest]]:
    """Sweep reports and the identity manifest previously written to the output directory.

    Files that do not parse are skipped with a warning.
    """
    directory = Path(directory or settings.OUTPUT_DIR)
    reports: List[VerificationReport] = []
    for path in sorted(directory.glob("thm6*_n*.json")):
        try:
            reports.append(VerificationReport.model_validate_json(path.read_text(encoding="utf-8")))
        except ValueError as e:
            logger.warning(f"Skipping unreadable report {path}: {e}")
    identities = None
    manifest_path = directory / IDENTITY_REPORT_NAME
    if manifest_path.exists():
        try:
            identities = IdentityManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
        except ValueError as e:
            logger.warning(f"Skipping unreadable identity manifest {manifest_path}: {e}")
    return reports, identities
