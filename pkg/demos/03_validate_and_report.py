"""Validation and fleet reporting walkthrough.

Scores a fitted calibration set with random presses against the rig's
load-cell ground truth, then rolls the per-module errors up into the
fleet statistics and fixed-bin histograms the reporting tools emit.

Run: python3 demos/03_validate_and_report.py
"""

from pathlib import Path

import numpy as np

from fretsense import calibration as cal
from fretsense.emulator import EmulatorConfig, FretboardEmulator
from fretsense.model import all_modules

out_dir = Path(__file__).resolve().parent.parent / "demo_output"
out_dir.mkdir(exist_ok=True)

config = EmulatorConfig()  # default noise model
emulator = FretboardEmulator(config)
rig = cal.CalibrationRig(emulator, seed=config.seed)

print("calibrating (prerequisite for scoring)...")
calset = {m: rig.calibrate(m) for m in all_modules()}

print("validating: 20 random presses per module vs load-cell truth...")
results = [
    rig.validate(m, calset[m], n_trials=20, seed=[7, m.index])
    for m in all_modules()
]

report = cal.fleet_report(results)
rmse = np.array([r.rmse for r in results])
worst = np.array([r.worst_error_pct_fso for r in results])
print(f"  rmse: mean {rmse.mean():.3f} N, max {rmse.max():.3f} N")
print(f"  worst error: mean {worst.mean():.2f} % FSO, max {worst.max():.2f} % FSO")
print(f"  fraction of modules with rmse < 0.4 N: {report.fraction_rmse_under_0p4:.2f}")
print(f"  fraction with worst error < 5% FSO:    {report.fraction_worst_under_5pct:.2f}")

cal.write_results(results, out_dir / "validation.txt")
cal.write_fleet_summary(report, out_dir / "fleet_summary.txt")
cal.write_histogram_csv(report.rmse_hist, out_dir / "hist_rmse.csv")
cal.write_histogram_csv(report.worst_hist, out_dir / "hist_worst.csv")
print(f"\nwrote validation.txt, fleet_summary.txt and 2 histogram CSVs "
      f"to {out_dir}")

# Text rendering of the RMSE histogram: fixed 0.05 N bins from 0 to 1 N.
print("\nRMSE distribution:")
hist = report.rmse_hist
for left, right, count in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
    if count:
        print(f"  [{left:4.2f}, {right:4.2f}) N  {'#' * count} {count}")
if hist.overflow:
    print(f"  >= {hist.edges[-1]:4.2f}  N  {'#' * hist.overflow} {hist.overflow}")

print("\nsame thing via the CLI: fretsense validate calset.txt --trials 50")
print("and: fretsense report validation.txt --out-dir reports/")
