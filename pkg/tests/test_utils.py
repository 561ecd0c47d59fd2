"""Tests for utility functions."""

import json
import sys
from fractions import Fraction
from pathlib import Path

import pandas as pd
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from app.config import Settings
from app.schemas import ConstantsResponse, PointResult, SweepSummary
from app.utils import (
    SWEEP_CSV_COLUMNS,
    append_checkpoint,
    checkpoint_keys,
    format_rational,
    load_checkpoint,
    parse_index_list,
    parse_rational,
    records_to_csv,
    sha256_file,
    write_json_report,
)

pytestmark = pytest.mark.unit


def test_parse_rational_literals():
    """Test fractions, integers and decimals parse exactly."""
    assert parse_rational("0.1") == Fraction(1, 10)
    assert parse_rational("-3/6") == Fraction(-1, 2)
    assert parse_rational(" 7 ") == 7
    assert parse_rational("1e-3") == Fraction(1, 1000)
    assert parse_rational(5) == 5
    assert parse_rational(Fraction(2, 3)) == Fraction(2, 3)


@pytest.mark.parametrize("text", ["", "1/0", "a/b", "1//2", "nan", "inf", "abc"])
def test_parse_rational_rejects_malformed(text):
    """Test malformed literals raise ValueError."""
    with pytest.raises(ValueError):
        parse_rational(text)


def test_format_rational():
    """Test rationals format as 'p/q' and integers without a denominator."""
    assert format_rational(Fraction(1, 10)) == "1/10"
    assert format_rational(Fraction(4, 2)) == "2"
    assert format_rational(Fraction(-3, 9)) == "-1/3"
    assert parse_rational(format_rational(Fraction(1000, 10133))) == Fraction(1000, 10133)


def test_parse_index_list():
    """Test ranges, lists and duplicates."""
    assert parse_index_list("0..3") == [0, 1, 2, 3]
    assert parse_index_list("0,125,250") == [0, 125, 250]
    assert parse_index_list("5, 1..2, 2") == [1, 2, 5]
    with pytest.raises(ValueError):
        parse_index_list("3..1")
    with pytest.raises(ValueError):
        parse_index_list("x")


def test_sha256_file(tmp_path):
    """Test the digest of a known payload."""
    path = tmp_path / "payload.txt"
    path.write_bytes(b"abc")
    assert sha256_file(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_write_json_report(tmp_path):
    """Test pydantic reports are written with parent directories."""
    path = write_json_report(SweepSummary(total=2, verified=2), tmp_path / "nested" / "summary.json")
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["total"] == 2
    assert payload["falsified"] == 0


def test_records_to_csv_column_order(tmp_path):
    """Test the fixed column order, dropped extras and empty cells."""
    records = [{"l": 0, "k": 1, "j": 1, "extra": "x"}, {"k": 2, "l": 3, "j": 4, "verdict": "verified"}]
    path = records_to_csv(records, tmp_path / "out.csv", SWEEP_CSV_COLUMNS)
    df = pd.read_csv(path)
    assert list(df.columns) == SWEEP_CSV_COLUMNS
    assert len(df) == 2
    assert df["verdict"].isna().iloc[0]


def test_checkpoint_round_trip(tmp_path):
    """Test appended records load back and a torn line is skipped."""
    path = tmp_path / "ck" / "thm61_n20.jsonl"
    assert load_checkpoint(path) == []
    append_checkpoint(path, {"k": 1, "l": 0, "j": 2, "verdict": "verified"})
    append_checkpoint(path, {"k": None, "l": 5, "j": 3, "verdict": "not_certified"})
    with open(path, "a", encoding="utf-8") as f:
        f.write('{"k": 1, "l": ')
    records = load_checkpoint(path)
    assert len(records) == 2
    assert checkpoint_keys(records) == {(1, 0, 2), (None, 5, 3)}


def test_settings_read_environment(monkeypatch):
    """Test settings come from the environment and the .env file."""
    monkeypatch.setenv("N_JOBS", "3")
    assert Settings().N_JOBS == 3
    assert Settings.model_config["env_file"] == ".env"
    assert Settings.model_config["env_file_encoding"] == "utf-8"


def test_schema_model_config():
    """Test response models carry their example and name population options."""
    example = ConstantsResponse.model_json_schema()["example"]
    assert example["k"]["1"] == pytest.approx(0.3340766)
    assert PointResult.model_config["populate_by_name"] is True
