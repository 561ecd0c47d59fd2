"""Constants reports and the constants tables over the published shapes."""

import logging
import math
from typing import Dict, List, Optional, Sequence

import pandas as pd

from app.eigen import PolynomialSubspaceSpec, poly_subspace_constant, upper_bound
from app.geometry import (
    TABLE_SHAPES,
    TableShape,
    Triangle,
    TriangleShape,
    circumradius,
    normalize_shape,
    shape_constants,
)
from app.mesh import SPACE_FOR_J
from app.schemas import ConstantsResponse, InvalidShapeError, TableResponse, TableRow
from app.utils import format_rational

logger = logging.getLogger(__name__)

TABLE_CSV_COLUMNS = ["label", "a", "b", "k"]


def constants_report(tri: Triangle) -> ConstantsResponse:
    """K_1..K_4, L_j(a, b), R(T) and the normalized shape of a triangle.

    Raises:
        DegenerateTriangleError: For zero-area input
    """
    shape, record = normalize_shape(tri)
    l_values = shape_constants(shape)
    converted = tri.converted or record.converted
    if converted:
        logger.warning("Constants computed from float-rounded coordinates")
    return ConstantsResponse(
        shape=shape.to_model(),
        scale=record.scale,
        k={str(j): record.k_factor(j) * math.sqrt(value) for j, value in l_values.items()},
        l={str(j): format_rational(value) for j, value in l_values.items()},
        circumradius=circumradius(tri),
        converted_from_float=converted,
    )


def shape_report(a, b) -> ConstantsResponse:
    """Constants report of T_{a,b} given by its apex."""
    return constants_report(Triangle.from_shape(TriangleShape.of(a, b)))


def _table_row(j: int, entry: TableShape, n_values: Sequence[int], degree: Optional[int]) -> TableRow:
    shape = entry.shape
    upper: Dict[str, float] = {}
    for n in n_values:
        upper[str(n)] = upper_bound(j, n, shape)
    lower = None
    if degree is not None:
        lower = poly_subspace_constant(j, shape, PolynomialSubspaceSpec(degree, SPACE_FOR_J[j]))
    return TableRow(
        label=entry.label,
        a=float(entry.a),
        b=float(entry.b),
        k=math.sqrt(shape_constants(shape)[j]),
        upper=upper,
        lower=lower,
    )


def constants_table(
    j: int,
    n_values: Sequence[int] = (),
    degree: Optional[int] = None,
    shapes: Sequence[TableShape] = TABLE_SHAPES,
) -> TableResponse:
    """Rows of the table for C_j: K_j, refinement bounds and the polynomial estimate.

    Args:
        j: Constant index 1..4
        n_values: Refinement levels for the upper bound columns
        degree: Polynomial degree of the lower estimate, or None to skip it
        shapes: Row shapes, the twelve published ones by default

    Raises:
        InvalidShapeError: For j outside 1..4
    """
    if j not in SPACE_FOR_J:
        raise InvalidShapeError(f"Constant index must be 1..4, got {j}")
    n_values = sorted(set(n_values))
    logger.info(f"Building table for C_{j}: n={n_values}, degree={degree}, {len(shapes)} rows")
    rows = [_table_row(j, entry, n_values, degree) for entry in shapes]
    return TableResponse(j=j, n_values=n_values, degree=degree, rows=rows)


def table_frame(table: TableResponse) -> pd.DataFrame:
    """Flatten a table into columns label, a, b, k, upper_n<n>..., lower."""
    records: List[Dict[str, object]] = []
    for row in table.rows:
        record: Dict[str, object] = {"label": row.label, "a": row.a, "b": row.b, "k": row.k}
        for n in table.n_values:
            record[f"upper_n{n}"] = row.upper.get(str(n))
        if table.degree is not None:
            record["lower"] = row.lower
        records.append(record)
    columns = TABLE_CSV_COLUMNS + [f"upper_n{n}" for n in table.n_values]
    if table.degree is not None:
        columns.append("lower")
    return pd.DataFrame(records, columns=columns)
