"""Tests for the sweep grids, thresholds, point certificates and proof chain."""

import json
import sys
from fractions import Fraction
from pathlib import Path

import pandas as pd
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

import app.verify as verify
from app.geometry import TriangleShape, continuation_factor, l_constant, l_limit
from app.schemas import (
    IdentityCase,
    IdentityManifest,
    IdentityMethod,
    IdentityStatus,
    InvalidShapeError,
    PointResult,
    SweepConfig,
    SweepMode,
    Verdict,
    VerificationReport,
)
from app.verify import (
    grid_spacing_check,
    lambda_threshold,
    proof_chain_status,
    run_sweep,
    sweep_points,
    main_grid,
    small_height_grid,
    verify_point,
)


@pytest.fixture
def grid():
    return main_grid()


@pytest.fixture
def small_config():
    return SweepConfig(mode=SweepMode.THM62, n=2, j=[1], l=[0, 250], lambda_scale="100")


def test_grid_levels(grid):
    """Test the height recurrence of the main grid."""
    assert len(grid) == 119
    assert grid.level(1).y == 1000
    assert grid.level(2).y == 1020
    assert grid.level(1).x == 25
    assert grid.level(1).b == 1
    assert grid.level(119).b == Fraction(1000, 10133)
    assert grid.total_points == 11917
    assert grid.total_points + len(small_height_grid()) == 12168


def test_grid_level_points(grid):
    """Test the abscissae of one level run from 0 to 1/2."""
    points = grid.level(1).points()
    assert len(points) == 26
    assert points[0].a == 0
    assert points[-1].a == Fraction(1, 2)
    assert points[5].shape == TriangleShape(Fraction(1, 10), Fraction(1))


def test_grid_spacing(grid):
    """Test both relative steps stay within 1/50 and the grid reaches b < 1/10."""
    report = grid_spacing_check(grid)
    assert report.max_b_ratio == Fraction(1, 50)
    assert report.max_a_ratio == Fraction(1, 50)
    assert report.last_b < Fraction(1, 10)
    assert report.holds


def test_grid_selection_errors(grid):
    """Test out-of-range levels and indices are rejected."""
    with pytest.raises(InvalidShapeError):
        grid.points([120])
    with pytest.raises(InvalidShapeError):
        grid.points([1], [26])
    assert grid.points([1], []) == []


def test_grid_frame(grid):
    """Test the tabular export of the grid with L_j columns."""
    df = grid.to_frame(j=[1])
    assert isinstance(df, pd.DataFrame)
    assert len(df) == 11917
    assert {"k", "l", "a", "b", "L1"} <= set(df.columns)
    assert df.iloc[0]["a"] == "0"
    assert df.iloc[1]["a"] == "1/50"


def test_small_height_grid():
    """Test the 251 abscissae of the small-height sweep."""
    points = small_height_grid()
    assert len(points) == 251
    assert points[-1].a == Fraction(1, 2)
    assert all(p.b == Fraction(1, 10) and p.k is None for p in points)
    with pytest.raises(InvalidShapeError):
        small_height_grid([251])


def test_lambda_threshold_main_sweep():
    """Test the refinement and continuation factors in the threshold."""
    shape = TriangleShape(Fraction(1, 4), Fraction(1, 2))
    h = Fraction(1, 50)
    for j in (1, 2):
        expected = l_constant(j, shape) * Fraction(399, 400) / (
            continuation_factor(j, "a", h) * continuation_factor(j, "b", h)
        )
        assert lambda_threshold(j, shape, SweepMode.THM61, 20) == expected
    expected = l_constant(3, shape) * Fraction(159999, 160000) / (
        continuation_factor(3, "a", h) * continuation_factor(3, "b", h)
    )
    assert lambda_threshold(3, shape, "thm61", 20) == expected
    expected = l_constant(4, shape) / (Fraction(2509, 2500) ** 2) - l_constant(2, shape) / 400
    assert lambda_threshold(4, shape, SweepMode.THM61, 20) == expected


def test_lambda_threshold_small_height():
    """Test the threshold built on the limit of L_j."""
    shape = TriangleShape(Fraction(1, 5), Fraction(1, 10))
    expected = l_limit(2, Fraction(1, 5)) * Fraction(399, 400) / Fraction(2505, 2500)
    assert lambda_threshold(2, shape, SweepMode.THM62, 20) == expected
    with pytest.raises(InvalidShapeError):
        lambda_threshold(4, shape, SweepMode.THM62, 20)
    with pytest.raises(InvalidShapeError):
        lambda_threshold(1, shape, SweepMode.THM61, 1)
    with pytest.raises(ValueError):
        lambda_threshold(1, shape, "thm63", 20)


def test_verify_point_generous_threshold():
    """Test a certificate with a scaled-up threshold succeeds."""
    shape = TriangleShape(Fraction(1, 4), Fraction(1, 2))
    result = verify_point(1, 2, shape, SweepMode.THM61, lambda_scale=Fraction(100), k=1, l=0, estimate=True)
    assert result.verdict == Verdict.VERIFIED
    assert not result.falsified
    assert result.estimate < float(Fraction(result.lambda_))
    assert result.implication is None


def test_verify_point_falsified():
    """Test a threshold far below the eigenvalue is reported as falsified."""
    shape = TriangleShape(Fraction(1, 4), Fraction(1, 2))
    result = verify_point(2, 2, shape, SweepMode.THM61, lambda_scale=Fraction(1, 1000))
    assert result.verdict == Verdict.NOT_CERTIFIED
    assert result.falsified
    assert result.estimate > float(Fraction(result.lambda_))


def test_verify_point_small_height_implication():
    """Test a certified small-height point states the strip it covers."""
    shape = TriangleShape(Fraction(1, 4), Fraction(1, 10))
    result = verify_point(3, 2, shape, SweepMode.THM62, lambda_scale=Fraction(100), l=125)
    assert result.verdict == Verdict.VERIFIED
    assert "a = 1/4" in result.implication
    assert result.model_dump(by_alias=True)["lambda"] == result.lambda_


@pytest.mark.slow
@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_verify_point_reference_setup(j, grid):
    """Test the reference certificate at the first main-grid point."""
    point = grid.level(1).points()[0]
    result = verify_point(j, 20, point.shape, SweepMode.THM61, k=1, l=0)
    assert result.verdict == Verdict.VERIFIED


@pytest.mark.slow
def test_verify_point_reference_small_height():
    """Test the reference certificate at the midpoint of the small-height grid."""
    point = small_height_grid([125])[0]
    for j in (1, 2, 3):
        result = verify_point(j, 20, point.shape, SweepMode.THM62, l=point.l)
        assert result.verdict == Verdict.VERIFIED


def test_sweep_points_selection():
    """Test slice expansion and its validation."""
    items = sweep_points(SweepConfig(mode=SweepMode.THM61, k=[1, 2], l=[0], j=[4, 1]))
    assert [(p.k, p.l, j) for p, j in items] == [(1, 0, 1), (1, 0, 4), (2, 0, 1), (2, 0, 4)]
    assert sweep_points(SweepConfig(mode=SweepMode.THM61, k=[3], l=[])) == []
    assert len(sweep_points(SweepConfig(mode=SweepMode.THM62, j=[1, 2, 3]))) == 753
    with pytest.raises(InvalidShapeError):
        sweep_points(SweepConfig(mode=SweepMode.THM62, j=[4]))
    with pytest.raises(InvalidShapeError):
        sweep_points(SweepConfig(mode=SweepMode.THM62, k=[1], j=[1]))


def test_run_sweep_empty_slice(tmp_path):
    """Test an empty slice yields an empty report."""
    config = SweepConfig(mode=SweepMode.THM61, k=[1], l=[])
    report = run_sweep(config, checkpoint=tmp_path / "ck.jsonl")
    assert report.summary.total == 0
    assert report.points == []
    assert not report.config.deviates_from_reference


def test_run_sweep_outputs(tmp_path, small_config):
    """Test the JSON report, CSV export and checkpoint of a small sweep."""
    output = tmp_path / "report.json"
    csv_output = tmp_path / "report.csv"
    checkpoint = tmp_path / "ck.jsonl"
    report = run_sweep(small_config, checkpoint=checkpoint, output=output, csv_output=csv_output, seed=3)
    assert report.all_verified
    assert report.summary.total == 2
    assert report.config.deviates_from_reference
    assert set(report.versions) == {"python", "numpy", "scipy", "sympy"}

    payload = json.loads(output.read_text(encoding="utf-8"))
    assert payload["seed"] == 3
    assert [p["l"] for p in payload["points"]] == [0, 250]
    assert "lambda" in payload["points"][0]

    df = pd.read_csv(csv_output)
    assert list(df.columns) == ["k", "l", "a", "b", "j", "n", "lambda", "verdict", "falsified", "seconds"]
    assert len(df) == 2
    assert len(checkpoint.read_text(encoding="utf-8").splitlines()) == 2


def test_run_sweep_resume(tmp_path, small_config, monkeypatch):
    """Test resuming skips checkpointed points and keeps their verdicts."""
    checkpoint = tmp_path / "ck.jsonl"
    run_sweep(small_config, checkpoint=checkpoint)

    calls = []
    original = verify._verify_task

    def spy(point, j, n, mode, scale):
        calls.append((point.l, j))
        return original(point, j, n, mode, scale)

    monkeypatch.setattr(verify, "_verify_task", spy)
    extended = small_config.model_copy(update={"l": [0, 125, 250]})
    report = run_sweep(extended, resume=True, checkpoint=checkpoint)
    assert calls == [(125, 1)]
    assert [p.l for p in report.points] == [0, 125, 250]
    assert report.summary.verified == 3
    assert len(checkpoint.read_text(encoding="utf-8").splitlines()) == 3


def _identity_manifest(status: IdentityStatus) -> IdentityManifest:
    return IdentityManifest(
        manifest_sha256="0" * 64,
        seed=1,
        cases=[
            IdentityCase(lemma_id=lemma, method=IdentityMethod.EXPAND, status=status)
            for lemma in ("14.9", "14.10", "14.11")
        ],
    )


def test_proof_chain_without_runs():
    """Test the locally re-checked ingredients and the pending sweeps."""
    status = proof_chain_status()
    by_name = {i.name: i for i in status.ingredients}
    assert by_name["grid_spacing"].status == "re-verified"
    assert by_name["region_cover"].status == "re-verified"
    assert by_name["derivative_bounds"].status == "re-verified"
    assert by_name["limit_below_l"].status == "re-verified"
    assert by_name["continuation_constants"].status == "inherited"
    assert by_name["thm61_sweep"].status == "pending"
    assert by_name["c4_small_height_identities"].status == "pending"
    assert status.status == "partially re-verified; full sweep pending"


def test_proof_chain_with_identities():
    """Test identity results flow into the chain."""
    status = proof_chain_status(identities=_identity_manifest(IdentityStatus.PASSED))
    by_name = {i.name: i for i in status.ingredients}
    assert by_name["c4_small_height_identities"].status == "re-verified"
    failed = proof_chain_status(identities=_identity_manifest(IdentityStatus.FAILED))
    assert failed.status == "failed"


def test_proof_chain_failed_sweep_point():
    """Test a non-certified reference point marks the chain failed."""
    point = PointResult(
        k=None, l=0, a="0", b="1/10", j=1, n=20, lambda_="1/100",
        verdict=Verdict.NOT_CERTIFIED, falsified=False, seconds=0.1,
    )
    report = VerificationReport(config=SweepConfig(mode=SweepMode.THM62), points=[point], seed=1)
    status = proof_chain_status(reports=[report])
    by_name = {i.name: i for i in status.ingredients}
    assert by_name["thm62_sweep"].status == "failed"
    assert status.status == "failed"


def test_proof_chain_ignores_deviating_reports():
    """Test reports off the reference setup do not count towards the sweeps."""
    point = PointResult(
        k=None, l=0, a="0", b="1/10", j=1, n=2, lambda_="1",
        verdict=Verdict.VERIFIED, falsified=False, seconds=0.1,
    )
    config = SweepConfig(mode=SweepMode.THM62, n=2, deviates_from_reference=True)
    report = VerificationReport(config=config, points=[point], seed=1)
    by_name = {i.name: i for i in proof_chain_status(reports=[report]).ingredients}
    assert by_name["thm62_sweep"].status == "pending"
    assert by_name["thm62_sweep"].detail.startswith("0/753")


def test_proof_chain_coarse_certificates(monkeypatch):
    """Test the optional coarse C_4 certificates are reported when requested."""
    monkeypatch.setattr(verify, "c4_coarse_certificates", lambda: [True, True])
    by_name = {i.name: i for i in proof_chain_status(coarse_certificates=True).ingredients}
    assert by_name["c4_coarse_certificates"].status == "re-verified"
    monkeypatch.setattr(verify, "c4_coarse_certificates", lambda: [True, False])
    assert proof_chain_status(coarse_certificates=True).status == "failed"
