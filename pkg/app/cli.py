"""Command-line entry point: ``python -m app.cli <command> ...``.

Exit codes: 0 on success, 1 when a certificate or identity fails, 2 on
usage errors and invalid or degenerate input.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from app.config import ensure_directories, settings
from app.geometry import Triangle, k_constant_surface
from app.identities import SUPPORTED_LEMMAS, run_identity_suite
from app.schemas import (
    CliConfig,
    InterpolationConstantError,
    OutputFormat,
    SweepConfig,
    SweepMode,
    UnknownLemmaError,
    VerificationReport,
)
from app.tables import constants_report, constants_table, shape_report, table_frame
from app.utils import parse_index_list, write_json_report
from app.verify import ALL_J, IDENTITY_REPORT_NAME, SMALL_HEIGHT_J, main_grid, run_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _j_list(text: str, mode: Optional[SweepMode] = None) -> List[int]:
    if text == "all":
        return list(SMALL_HEIGHT_J if mode == SweepMode.THM62 else ALL_J)
    return parse_index_list(text)


def _vertex(text: str) -> List[str]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"Vertex must be 'x,y', got {text!r}")
    return parts


def _emit_frame(df: pd.DataFrame, output: Optional[str]) -> None:
    if output:
        path = Path(output)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False)
        logger.info(f"Exported {len(df)} rows to {path}")
    else:
        print(df.to_csv(index=False), end="")


def _emit_json(report, output: Optional[str]) -> None:
    if output:
        write_json_report(report, Path(output))
    else:
        print(report.model_dump_json(indent=2, by_alias=True))


def cmd_constants(args: argparse.Namespace) -> int:
    if args.vertices:
        report = constants_report(Triangle.from_points(args.vertices))
    else:
        report = shape_report(*args.shape)
    fmt = OutputFormat(args.format)
    if fmt == OutputFormat.JSON:
        _emit_json(report, args.output)
    elif fmt == OutputFormat.CSV:
        row = {"a": report.shape.a, "b": report.shape.b, "scale": report.scale,
               "circumradius": report.circumradius}
        row.update({f"K{j}": value for j, value in report.k.items()})
        row.update({f"L{j}": value for j, value in report.l.items()})
        _emit_frame(pd.DataFrame([row]), args.output)
    else:
        print(f"T_(a,b): a = {report.shape.a}, b = {report.shape.b} (scale {report.scale:.7f})")
        for j, value in report.k.items():
            print(f"K{j} = {value:.7f}    L{j} = {report.l[j]}")
        print(f"R(T) = {report.circumradius:.7f}")
    return EXIT_OK


def cmd_table(args: argparse.Namespace) -> int:
    n_values = parse_index_list(args.n) if args.n else []
    table = constants_table(args.table_id, n_values, args.degree)
    df = table_frame(table)
    if args.output:
        csv_path = Path(args.output).with_suffix(".csv")
        _emit_frame(df, str(csv_path))
        write_json_report(table, csv_path.with_suffix(".json"))
    elif OutputFormat(args.format) == OutputFormat.JSON:
        _emit_json(table, None)
    else:
        print(df.to_string(index=False, float_format=lambda v: f"{v:.7f}"))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    mode = SweepMode(args.mode)
    config = SweepConfig(
        mode=mode,
        n=args.n,
        j=_j_list(args.j, mode),
        k=parse_index_list(args.k) if args.k else [],
        l=parse_index_list(args.l) if args.l is not None else None,
        n_jobs=args.n_jobs,
        lambda_scale=args.lambda_scale,
    )
    output = Path(args.output) if args.output else settings.OUTPUT_DIR / f"{mode.value}_n{args.n}.json"
    report = run_sweep(
        config,
        resume=args.resume,
        checkpoint=Path(args.checkpoint) if args.checkpoint else None,
        output=output,
        csv_output=Path(args.csv) if args.csv else None,
        seed=args.seed,
    )
    summary = report.summary
    print(
        f"{summary.verified}/{summary.total} verified, {summary.not_certified} not certified, "
        f"{summary.falsified} falsified; report: {output}"
    )
    return EXIT_OK if report.all_verified else EXIT_FAILED


def cmd_identities(args: argparse.Namespace) -> int:
    lemma_ids = None if args.lemma == "all" else [s.strip() for s in args.lemma.split(",") if s.strip()]
    output = Path(args.output) if args.output else settings.OUTPUT_DIR / IDENTITY_REPORT_NAME
    manifest = run_identity_suite(lemma_ids, n_jobs=args.n_jobs, seed=args.seed, output=output)
    for case in manifest.cases:
        print(f"{case.lemma_id:>6}  {case.status.value:<7} {case.method.value:<22} "
              f"{case.checked:>4} checks  {case.seconds:8.2f}s  {case.detail}")
    return EXIT_OK if manifest.all_passed else EXIT_FAILED


def cmd_grid(args: argparse.Namespace) -> int:
    df = main_grid().to_frame(_j_list(args.j))
    _emit_frame(df, args.output)
    if args.surface:
        frames = []
        for j in _j_list(args.j):
            surface = k_constant_surface(j, args.surface)
            surface.insert(0, "j", j)
            frames.append(surface)
        target = Path(args.output).with_name(Path(args.output).stem + "_surface.csv") if args.output else None
        _emit_frame(pd.concat(frames, ignore_index=True), str(target) if target else None)
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    text = json.dumps(VerificationReport.model_json_schema(by_alias=True), indent=2)
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Schema written to {path}")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m app.cli",
        description="Interpolation error constants on triangles and their verified bounds.",
    )
    parser.add_argument("--seed", type=int, default=settings.SEED, help="Seed of random harnesses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="Closed-form bounds K_1..K_4 of one triangle")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--shape", nargs=2, metavar=("A", "B"), help="Apex of T_(a,b) as 'p/q' or decimal")
    source.add_argument("--vertices", nargs=3, type=_vertex, metavar="X,Y", help="Three vertices")
    p.add_argument("--format", choices=[f.value for f in OutputFormat], default=OutputFormat.TEXT.value)
    p.add_argument("--output", help="Write to this file instead of stdout")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("table", help="Rows of the constants table for C_j")
    p.add_argument("table_id", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--n", help="Refinement levels, e.g. '10,20'")
    p.add_argument("--degree", type=int, help="Degree of the polynomial lower estimate")
    p.add_argument("--format", choices=[OutputFormat.TEXT.value, OutputFormat.JSON.value],
                   default=OutputFormat.TEXT.value)
    p.add_argument("--output", help="Base path; CSV and JSON are written side by side")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("verify", help="Verified sweep over a grid slice")
    p.add_argument("--mode", choices=[m.value for m in SweepMode], required=True)
    p.add_argument("--k", help="Height levels, e.g. '1..10' (default: all)")
    p.add_argument("--l", help="Abscissa indices, e.g. '0..25' (default: all)")
    p.add_argument("--j", default="all", help="'all' or a list such as '1,2,3'")
    p.add_argument("--n", type=int, default=settings.DEFAULT_N)
    p.add_argument("--n-jobs", type=int, default=settings.N_JOBS)
    p.add_argument("--lambda-scale", default=str(settings.SWEEP_MARGIN),
                   help="Multiplier of lambda for falsification experiments")
    p.add_argument("--resume", action="store_true", help="Skip points already in the checkpoint")
    p.add_argument("--checkpoint", help="Checkpoint file (JSON lines)")
    p.add_argument("--output", help="JSON report path")
    p.add_argument("--csv", help="CSV export path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("identities", help="Exact checks of the lemma identities")
    p.add_argument("--lemma", default="all", help=f"'all' or ids from {', '.join(SUPPORTED_LEMMAS)}")
    p.add_argument("--n-jobs", type=int, default=settings.N_JOBS)
    p.add_argument("--output", help="JSON manifest path")
    p.set_defaults(func=cmd_identities)

    p = sub.add_parser("grid", help="Main sweep grid with L_j as CSV")
    p.add_argument("--j", default="all")
    p.add_argument("--surface", type=int, metavar="M", help="Also sample K_j on an M x M canonical grid")
    p.add_argument("--output", help="CSV path")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("schema", help="JSON schema of the verification report")
    p.add_argument("--output")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    ensure_directories()
    config = CliConfig(
        command=args.command,
        shape=getattr(args, "shape", None),
        vertices=[",".join(v) for v in args.vertices] if getattr(args, "vertices", None) else None,
        output_format=OutputFormat(getattr(args, "format", OutputFormat.TEXT.value)),
        output=getattr(args, "output", None),
        seed=args.seed,
        n_jobs=getattr(args, "n_jobs", 1),
    )
    logger.debug(f"CLI config: {config.model_dump_json()}")
    try:
        return args.func(args)
    except UnknownLemmaError as e:
        logger.error(f"Unknown lemma: {e}")
        return EXIT_USAGE
    except (InterpolationConstantError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        if isinstance(e, ArithmeticError):
            return EXIT_FAILED
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
