"""Temperature drift and differential compensation walkthrough.

Each fret carries a 7th sensor facing a fixed surface. Temperature moves
all 7 sensors of a fret together, finger force only moves the 6 string
sensors, so subtracting the reference's excursion from each string
channel cancels the drift. This demo injects hard drift and compares
compensated vs uncompensated force readout at a constant 10 N press.

Run: python3 demos/04_temperature_compensation.py
"""

import numpy as np

from fretsense import calibration as cal
from fretsense.emulator import FretboardEmulator, parse_config
from fretsense.model import ModuleId

config = parse_config("noise_sigma 0\ndrift_mode off\ntruth_sigma 0\n")
emulator = FretboardEmulator(config)
rig = cal.CalibrationRig(emulator, seed=0)
module = ModuleId(5, 3)
curve = rig.calibrate(module)
baseline = cal.BaselineReference(np.full(12, 800))

forces = np.zeros((12, 6))
forces[module.fret - 1, module.string - 1] = 10.0

print(f"10 N held at {module}, slope {curve.slope:.5f} N/count\n")
print("  drift(counts)  uncompensated(N)  compensated(N)")
for drift in (-150, -75, 0, 75, 150):
    emulator.set_drift_offsets(np.full(12, float(drift)))
    frame = emulator.frame_for_forces(forces, 0.0)

    raw = frame.counts[module.fret - 1, module.string - 1]
    naive = cal.counts_to_force(raw, curve)

    comp_counts, clamped = cal.temp_compensate(frame, baseline)
    compensated = cal.counts_to_force(
        comp_counts[module.fret - 1, module.string - 1], curve
    )
    print(f"  {drift:13d}  {naive:16.2f}  {compensated:14.2f}")

print(
    "\nuncompensated readout wanders by roughly slope * drift "
    f"(~{abs(curve.slope) * 150:.1f} N at 150 counts); compensated readout "
    "holds at 10 N."
)
print("integer drift cancels exactly; fractional drift leaves at most the")
print("1-count rounding residual, well under the 0.05 N acceptance bound.")
