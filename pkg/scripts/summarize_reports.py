"""Summarize the sweep reports and identity manifest saved in the output directory.

Usage: python scripts/summarize_reports.py [results_dir]
"""

import sys
from pathlib import Path

import pandas as pd

sys.path.append(str(Path(__file__).resolve().parents[1]))

from app.config import settings
from app.verify import load_saved_runs, proof_chain_status

directory = Path(sys.argv[1]) if len(sys.argv) > 1 else settings.OUTPUT_DIR
reports, identities = load_saved_runs(directory)

print("=" * 70)
print("SWEEP RESULTS")
print("=" * 70 + "\n")

frames = []
for report in reports:
    df = pd.DataFrame([p.model_dump(mode="json", by_alias=True) for p in report.points])
    if df.empty:
        continue
    df["mode"] = report.config.mode.value
    df["reference"] = not report.config.deviates_from_reference
    frames.append(df)

if frames:
    points = pd.concat(frames, ignore_index=True)
    by_j = points.groupby(["mode", "j"]).agg(
        total=("verdict", "size"),
        verified=("verdict", lambda v: (v == "verified").sum()),
        falsified=("falsified", "sum"),
        mean_seconds=("seconds", "mean"),
    )
    print(by_j.to_string())
    print()

    failed = points[points["verdict"] != "verified"]
    print(f"NOT CERTIFIED: {len(failed)}")
    for _, row in failed.head(20).iterrows():
        print(f"  {row['mode']} k={row['k']} l={row['l']} j={row['j']}: lambda={row['lambda']}, "
              f"falsified={row['falsified']}")

    print("\nSLOWEST POINTS:")
    for _, row in points.nlargest(5, "seconds").iterrows():
        print(f"  {row['mode']} k={row['k']} l={row['l']} j={row['j']}: {row['seconds']:.1f}s")

    target = directory / "sweep_summary.csv"
    by_j.to_csv(target)
    print(f"\nSummary saved to: {target}")
else:
    print(f"No sweep reports found in {directory}")

print("\n" + "=" * 70)
print("PROOF CHAIN")
print("=" * 70)
status = proof_chain_status(reports=reports, identities=identities)
for ingredient in status.ingredients:
    print(f"  {ingredient.name:<28} {ingredient.status:<12} {ingredient.detail}")
print(f"\nStatus: {status.status}")
print("=" * 70)
