"""Utility functions for exact rational I/O, reports and checkpoints.

This module provides the helpers shared by the CLI, the API and the sweep
driver: parsing and formatting exact rationals, writing JSON reports and
CSV summaries, hashing files, and JSON-lines checkpoint bookkeeping.
"""

import hashlib
import json
import logging
import re
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Set, Tuple, Union

import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)

# Accepted rational literals: "p/q", integers and plain decimals
RATIONAL_PATTERN = re.compile(r"^\s*[+-]?\d+\s*/\s*[+-]?\d+\s*$")

# Column order of the sweep CSV export
SWEEP_CSV_COLUMNS = [
    "k", "l", "a", "b", "j", "n", "lambda", "verdict", "falsified", "seconds"
]


def parse_rational(text: Union[str, int, Fraction]) -> Fraction:
    """Parse a rational literal without passing through binary floats.

    Decimals are expanded literally, so "0.1" becomes 1/10 rather than the
    nearest double.

    Args:
        text: "p/q", an integer or a decimal literal such as "0.125" or "1e-3"

    Returns:
        The exact rational value

    Raises:
        ValueError: If the literal is malformed or has a zero denominator

    Example:
        >>> parse_rational("0.1")
        Fraction(1, 10)
        >>> parse_rational("-3/6")
        Fraction(-1, 2)
    """
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    raw = str(text).strip()
    if not raw:
        raise ValueError("Empty rational literal")
    if "/" in raw:
        if not RATIONAL_PATTERN.match(raw):
            raise ValueError(f"Malformed rational literal: {text!r}")
        num, den = (part.strip() for part in raw.split("/"))
        if int(den) == 0:
            raise ValueError(f"Zero denominator in {text!r}")
        return Fraction(int(num), int(den))
    try:
        value = Decimal(raw)
    except InvalidOperation as e:
        raise ValueError(f"Malformed rational literal: {text!r}") from e
    if not value.is_finite():
        raise ValueError(f"Non-finite rational literal: {text!r}")
    return Fraction(value)


def format_rational(value: Fraction) -> str:
    """Format a rational as "p/q" (or "p" for integers)."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def parse_index_list(text: str) -> List[int]:
    """Parse index selectors such as "0..25", "0,125,250" or "3".

    Args:
        text: Comma separated integers or inclusive ranges "lo..hi"

    Returns:
        Sorted list of distinct indices

    Raises:
        ValueError: If a token is malformed or a range is reversed
    """
    indices: Set[int] = set()
    for token in str(text).split(","):
        token = token.strip()
        if not token:
            continue
        if ".." in token:
            lo_text, hi_text = token.split("..", 1)
            lo, hi = int(lo_text), int(hi_text)
            if hi < lo:
                raise ValueError(f"Reversed range: {token}")
            indices.update(range(lo, hi + 1))
        else:
            indices.add(int(token))
    return sorted(indices)


def sha256_file(path: Path) -> str:
    """Return the hex SHA-256 digest of a file."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json_report(report: BaseModel, path: Path) -> Path:
    """Serialize a pydantic report to a JSON file.

    Args:
        report: Any pydantic model
        path: Destination file; parent directories are created

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2, by_alias=True), encoding="utf-8")
    logger.info(f"Report written to {path}")
    return path


def records_to_csv(
    records: Sequence[Dict[str, Any]],
    path: Path,
    columns: Sequence[str],
) -> Path:
    """Export flat records to CSV with a fixed column order.

    Missing keys become empty cells and unknown keys are dropped.

    Args:
        records: Flat dictionaries, one per row
        path: Destination CSV path
        columns: Column order of the output

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(list(records))
    df = df.reindex(columns=list(columns))
    df.to_csv(path, index=False)
    logger.info(f"Exported {len(df)} rows to {path}")
    return path


def append_checkpoint(path: Path, record: Dict[str, Any]) -> None:
    """Append one JSON record as a line to a checkpoint file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def load_checkpoint(path: Path) -> List[Dict[str, Any]]:
    """Load all records of a checkpoint file, skipping a torn final line."""
    path = Path(path)
    if not path.exists():
        return []
    records: List[Dict[str, Any]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning(f"Skipping unreadable checkpoint line {lineno} in {path}")
    return records


def checkpoint_keys(records: Iterable[Dict[str, Any]]) -> Set[Tuple[Any, int, int]]:
    """Return the (k, l, j) grid keys present in checkpoint records."""
    return {(r.get("k"), int(r["l"]), int(r["j"])) for r in records}
