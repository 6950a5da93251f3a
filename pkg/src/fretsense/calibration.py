"""Calibration, temperature compensation, validation, and fleet reporting.

The workflow mirrors a bench session against the real instrument: capture a
drift-free baseline from the reference sensors, sweep each module 0->25->0 N
twice against an emulated load cell, fit a per-module linear counts->newtons
curve, then validate with random target forces and aggregate the fleet
statistics (RMSE and worst-case %FSO histograms and threshold fractions).

Compensation is differential and happens in counts-space before any curve is
applied: subtracting each fret's reference-channel excursion removes the
common-mode temperature term exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .emulator import FretboardEmulator
from .model import (
    ADC_MAX,
    FORCE_MAX_N,
    N_ACTIVE_FRETS,
    N_MODULES,
    N_STRINGS,
    FretsenseError,
    ModuleId,
    RawFrame,
    all_modules,
)

R_SQUARED_GATE = 0.99
SWEEP_STEP_N = 1.0
SWEEP_TRIALS = 2
DEFAULT_VALIDATION_TRIALS = 50
LOW_CONFIDENCE_TRIALS = 10

# Fixed histogram bins for fleet reports.
RMSE_BIN_EDGES = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)
WORST_BIN_EDGES = np.round(np.arange(0.0, 10.0 + 1e-9, 0.5), 10)

CALSET_FORMAT = "fretsense-calset 1"


class DegenerateFitError(FretsenseError):
    """Zero count variance (or zero slope): no usable line through the data."""


class InsufficientDataError(FretsenseError):
    """Fewer samples than a line fit needs."""


class CompensationUnavailableError(FretsenseError):
    """No baseline captured; pass-through must be requested explicitly."""


class UnstableBaselineError(FretsenseError):
    """Reference channels moved too much during baseline capture."""


class SweepAborted(FretsenseError):
    """The sample source failed mid-sweep; partial data is unusable."""


class CalsetFormatError(FretsenseError):
    """A calibration-set file does not match the documented format."""


@dataclass(frozen=True)
class CalibrationSample:
    """One sweep point: load-cell ground truth paired with compensated counts."""

    module: ModuleId
    applied_force: float
    counts: float

    def __post_init__(self):
        if not (0.0 <= self.applied_force <= FORCE_MAX_N):
            raise ValueError("applied_force outside [0, 25] N")


@dataclass(frozen=True)
class CalibrationCurve:
    """Per-module affine counts->newtons map with its fit quality."""

    module: ModuleId
    slope: float
    intercept: float
    r_squared: float
    n_samples: int

    def __post_init__(self):
        if not math.isfinite(self.slope) or self.slope == 0.0:
            raise ValueError("slope must be finite and nonzero")
        if not (0.0 <= self.r_squared <= 1.0):
            raise ValueError("r_squared outside [0, 1]")


@dataclass(frozen=True)
class BaselineReference:
    """Per-fret reference counts captured while the board was idle."""

    per_fret: np.ndarray

    def __post_init__(self):
        ref = np.asarray(self.per_fret)
        if ref.shape != (N_ACTIVE_FRETS,):
            raise ValueError("need one reference count per fret")
        if ref.min() < 0 or ref.max() > ADC_MAX:
            raise ValueError("reference counts outside [0, 4095]")
        ref = np.rint(ref).astype(int)
        ref.flags.writeable = False
        object.__setattr__(self, "per_fret", ref)


@dataclass(frozen=True)
class ValidationResult:
    module: ModuleId
    rmse: float
    worst_error_pct_fso: float
    n_trials: int

    def __post_init__(self):
        if self.rmse < 0 or self.worst_error_pct_fso < 0:
            raise ValueError("error metrics must be >= 0")


@dataclass(frozen=True)
class Histogram:
    edges: tuple
    counts: tuple
    overflow: int


@dataclass(frozen=True)
class FleetReport:
    results: tuple
    fraction_rmse_under_0p4: float
    fraction_worst_under_5pct: float
    rmse_hist: Histogram
    worst_hist: Histogram
    complete: bool
    missing: tuple


def capture_baseline(
    frames: Iterable[RawFrame], n_frames: int = 20, sigma_guard: float = 5.0
) -> BaselineReference:
    """Average the reference channels over idle frames into a drift anchor.

    Per-fret means are rounded to the nearest count. If any fret's reference
    wanders beyond sigma_guard counts std-dev the capture is rejected: the
    board was not idle or thermally settled.
    """
    refs = []
    for frame in frames:
        refs.append(frame.ref_counts().astype(float))
        if len(refs) >= n_frames:
            break
    if len(refs) < n_frames:
        raise UnstableBaselineError(
            f"only {len(refs)} of {n_frames} baseline frames available"
        )
    stack = np.vstack(refs)
    sigma = stack.std(axis=0)
    if sigma.max() > sigma_guard:
        fret = int(sigma.argmax()) + 1
        raise UnstableBaselineError(
            f"reference on fret {fret} unstable ({sigma.max():.2f} counts std-dev)"
        )
    return BaselineReference(np.rint(stack.mean(axis=0)))


def temp_compensate(
    frame: RawFrame, baseline: BaselineReference | None
) -> tuple[np.ndarray, np.ndarray]:
    """Remove per-fret common-mode drift from the 12x6 sense counts.

    c'[f][s] = c[f][s] - (ref[f] - baseline[f]), clamped to the ADC range.
    Returns (compensated counts, clamp mask); clamped cells lost information
    and should be treated as data-quality warnings.
    """
    if baseline is None:
        raise CompensationUnavailableError("no baseline captured")
    drift = frame.ref_counts().astype(float) - baseline.per_fret
    counts = frame.sense_counts().astype(float) - drift[:, None]
    clamped = (counts < 0) | (counts > ADC_MAX)
    return np.clip(counts, 0, ADC_MAX), clamped


def counts_to_force(counts, curve: CalibrationCurve):
    """Apply an affine calibration curve, clamped to the 0..25 N range."""
    force = curve.slope * np.asarray(counts, dtype=float) + curve.intercept
    force = np.clip(force, 0.0, FORCE_MAX_N)
    return float(force) if force.ndim == 0 else force


def fit_linear(samples: Sequence[CalibrationSample]) -> CalibrationCurve:
    """Ordinary least squares of force on counts.

    slope = cov(counts, force) / var(counts); intercept from the means;
    R^2 = 1 - SS_res/SS_tot, clamped into [0, 1].
    """
    if len(samples) < 3:
        raise InsufficientDataError(f"need >= 3 samples, got {len(samples)}")
    c = np.array([s.counts for s in samples], dtype=float)
    f = np.array([s.applied_force for s in samples], dtype=float)
    var = c.var()
    if var == 0.0:
        raise DegenerateFitError("counts are constant (zero variance)")
    slope = ((c - c.mean()) * (f - f.mean())).mean() / var
    if slope == 0.0:
        raise DegenerateFitError("flat fit: counts carry no force information")
    intercept = f.mean() - slope * c.mean()
    ss_res = float(((f - (slope * c + intercept)) ** 2).sum())
    ss_tot = float(((f - f.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise DegenerateFitError("applied forces are constant")
    r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return CalibrationCurve(
        module=samples[0].module,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        n_samples=len(c),
    )


def sweep_schedule(
    step: float = SWEEP_STEP_N, trials: int = SWEEP_TRIALS
) -> list[float]:
    """Force schedule for one module: 0 -> 25 -> 0 in 1 N steps, per trial.

    Two trials of 26 up + 25 down points give the canonical 102 samples.
    """
    n_up = int(round(FORCE_MAX_N / step))
    up = [i * step for i in range(n_up + 1)]
    down = list(reversed(up))[1:]
    return (up + down) * trials


def validation_metrics(errors) -> tuple[float, float]:
    """(RMSE in newtons, worst |error| as percent of the 25 N full scale)."""
    errors = np.asarray(errors, dtype=float)
    rmse = float(np.sqrt(np.mean(errors**2)))
    worst = float(np.abs(errors).max() / FORCE_MAX_N * 100.0)
    return rmse, worst


class CalibrationRig:
    """Emulated bench: micron stage pressing one module at a time, with a
    load cell (additive Gaussian error, default 0.025 N) as ground truth.

    Captures its baseline from idle frames on construction; every sample's
    counts are temperature-compensated against that anchor, so the fitted
    curves stay valid while the per-fret drift walks.
    """

    def __init__(
        self,
        emulator: FretboardEmulator,
        truth_sigma: float | None = None,
        seed: int = 0,
        baseline_frames: int = 20,
    ):
        self.emulator = emulator
        self.truth_sigma = (
            emulator.config.truth_sigma if truth_sigma is None else truth_sigma
        )
        self._rng = np.random.default_rng(seed)
        self._t_ms = 0
        self.baseline = capture_baseline(
            (self._idle_frame() for _ in range(baseline_frames)), baseline_frames
        )

    def _idle_frame(self) -> RawFrame:
        return self._press(None, 0.0)

    def _press(self, module: ModuleId | None, force: float) -> RawFrame:
        grid = np.zeros((N_ACTIVE_FRETS, N_STRINGS))
        if module is not None:
            grid[module.fret - 1, module.string - 1] = force
        frame = self.emulator.frame_for_forces(grid, self._t_ms)
        self._t_ms += 50
        return frame

    def _load_cell(self, force: float) -> float:
        if self.truth_sigma > 0:
            force = force + self._rng.normal(0.0, self.truth_sigma)
        return float(np.clip(force, 0.0, FORCE_MAX_N))

    def sample(self, module: ModuleId, force: float) -> CalibrationSample:
        """Press one module at one force and read back a compensated sample."""
        frame = self._press(module, force)
        counts, _ = temp_compensate(frame, self.baseline)
        return CalibrationSample(
            module=module,
            applied_force=self._load_cell(force),
            counts=float(counts[module.fret - 1, module.string - 1]),
        )

    def sweep(self, module: ModuleId) -> list[CalibrationSample]:
        """Run the full load/unload schedule against one module."""
        samples = []
        try:
            for force in sweep_schedule():
                samples.append(self.sample(module, force))
        except Exception as exc:
            raise SweepAborted(
                f"{module}: source failed after {len(samples)} samples: {exc}"
            ) from exc
        return samples

    def calibrate(self, module: ModuleId) -> CalibrationCurve:
        return fit_linear(self.sweep(module))

    def validate(
        self,
        module: ModuleId,
        curve: CalibrationCurve,
        n_trials: int = DEFAULT_VALIDATION_TRIALS,
        seed=None,
    ) -> ValidationResult:
        """Apply random forces in [0, 25] N and score the curve against the
        load cell. Deterministic for a fixed seed."""
        rng = self._rng if seed is None else np.random.default_rng(seed)
        targets = rng.uniform(0.0, FORCE_MAX_N, n_trials)
        errors = []
        for force in targets:
            frame = self._press(module, force)
            counts, _ = temp_compensate(frame, self.baseline)
            estimated = counts_to_force(
                counts[module.fret - 1, module.string - 1], curve
            )
            errors.append(estimated - self._load_cell(force))
        rmse, worst = validation_metrics(errors)
        return ValidationResult(
            module=module, rmse=rmse, worst_error_pct_fso=worst, n_trials=n_trials
        )


def fixed_histogram(values, edges) -> Histogram:
    """Histogram with half-open bins [left, right); values at or beyond the
    last edge land in the overflow counter."""
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, values, side="right") - 1
    in_range = (idx >= 0) & (values < edges[-1])
    counts = np.bincount(idx[in_range], minlength=len(edges) - 1)
    return Histogram(
        edges=tuple(edges),
        counts=tuple(int(n) for n in counts),
        overflow=int((values >= edges[-1]).sum()),
    )


def fleet_report(results: Sequence[ValidationResult]) -> FleetReport:
    """Aggregate per-module validation into the fleet summary.

    Threshold fractions use strict inequality (< 0.4 N, < 5 %FSO); a module
    sitting exactly on a threshold does not count as under it. An incomplete
    fleet is flagged, and fractions are over the modules present.
    """
    if not results:
        raise ValueError("no validation results")
    rmse = np.array([r.rmse for r in results])
    worst = np.array([r.worst_error_pct_fso for r in results])
    present = {r.module for r in results}
    missing = tuple(m for m in all_modules() if m not in present)
    return FleetReport(
        results=tuple(results),
        fraction_rmse_under_0p4=float((rmse < 0.4).mean()),
        fraction_worst_under_5pct=float((worst < 5.0).mean()),
        rmse_hist=fixed_histogram(rmse, RMSE_BIN_EDGES),
        worst_hist=fixed_histogram(worst, WORST_BIN_EDGES),
        complete=not missing,
        missing=missing,
    )


# --- file formats -----------------------------------------------------------


def write_calset(curves: Sequence[CalibrationCurve], path) -> None:
    """Calibration-set file: format header, then one line per module of
    `fret string slope intercept r2 n_samples` at 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {CALSET_FORMAT}\n")
        for c in sorted(curves, key=lambda c: c.module.index):
            fh.write(
                f"{c.module.fret} {c.module.string} {c.slope:.9g} "
                f"{c.intercept:.9g} {c.r_squared:.9g} {c.n_samples}\n"
            )


def read_calset(path) -> dict[ModuleId, CalibrationCurve]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].lstrip("# ").strip() != CALSET_FORMAT:
        raise CalsetFormatError(f"missing '{CALSET_FORMAT}' header")
    curves: dict[ModuleId, CalibrationCurve] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 6:
            raise CalsetFormatError(f"line {lineno}: expected 6 fields")
        try:
            module = ModuleId(int(fields[0]), int(fields[1]))
            curve = CalibrationCurve(
                module=module,
                slope=float(fields[2]),
                intercept=float(fields[3]),
                r_squared=float(fields[4]),
                n_samples=int(fields[5]),
            )
        except (ValueError, FretsenseError) as exc:
            raise CalsetFormatError(f"line {lineno}: {exc}") from None
        if module in curves:
            raise CalsetFormatError(f"line {lineno}: duplicate module {module}")
        curves[module] = curve
    return curves


def write_raw_samples(samples: Iterable[CalibrationSample], path) -> None:
    """Sweep/validation raw data: `fret string applied_N counts` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                f"{s.module.fret} {s.module.string} "
                f"{s.applied_force:.9g} {s.counts:.9g}\n"
            )


def read_raw_samples(path) -> list[CalibrationSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise CalsetFormatError(f"line {lineno}: expected 4 fields")
            try:
                samples.append(
                    CalibrationSample(
                        module=ModuleId(int(fields[0]), int(fields[1])),
                        applied_force=float(fields[2]),
                        counts=float(fields[3]),
                    )
                )
            except (ValueError, FretsenseError) as exc:
                raise CalsetFormatError(f"line {lineno}: {exc}") from None
    return samples


def write_results(results: Sequence[ValidationResult], path) -> None:
    """Per-module validation results: `fret string rmse_N worst_pct n_trials`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# fretsense-validation 1\n")
        for r in sorted(results, key=lambda r: r.module.index):
            fh.write(
                f"{r.module.fret} {r.module.string} {r.rmse:.9g} "
                f"{r.worst_error_pct_fso:.9g} {r.n_trials}\n"
            )


def read_results(path) -> list[ValidationResult]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].lstrip("# ").strip() != "fretsense-validation 1":
        raise CalsetFormatError("missing 'fretsense-validation 1' header")
    results = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise CalsetFormatError(f"line {lineno}: expected 5 fields")
        try:
            results.append(
                ValidationResult(
                    module=ModuleId(int(fields[0]), int(fields[1])),
                    rmse=float(fields[2]),
                    worst_error_pct_fso=float(fields[3]),
                    n_trials=int(fields[4]),
                )
            )
        except (ValueError, FretsenseError) as exc:
            raise CalsetFormatError(f"line {lineno}: {exc}") from None
    return results


def write_fleet_summary(report: FleetReport, path) -> None:
    """Machine-readable key-value summary of a fleet report."""
    rmse = np.array([r.rmse for r in report.results])
    worst = np.array([r.worst_error_pct_fso for r in report.results])
    trials = min(r.n_trials for r in report.results)
    lines = [
        ("format_version", 1),
        ("n_modules", len(report.results)),
        ("complete", str(report.complete).lower()),
        ("n_missing", len(report.missing)),
        ("fraction_rmse_under_0p4", f"{report.fraction_rmse_under_0p4:.9g}"),
        ("fraction_worst_under_5pct", f"{report.fraction_worst_under_5pct:.9g}"),
        ("rmse_mean_N", f"{rmse.mean():.9g}"),
        ("rmse_max_N", f"{rmse.max():.9g}"),
        ("worst_mean_pct", f"{worst.mean():.9g}"),
        ("worst_max_pct", f"{worst.max():.9g}"),
        ("min_trials", trials),
        ("low_confidence", str(trials < LOW_CONFIDENCE_TRIALS).lower()),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in lines:
            fh.write(f"{key} {value}\n")


def write_histogram_csv(hist: Histogram, path) -> None:
    """Histogram CSV: bin_left,bin_right,count rows plus an overflow row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_left,bin_right,count\n")
        for left, right, n in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            fh.write(f"{left:.9g},{right:.9g},{n}\n")
        fh.write(f"{hist.edges[-1]:.9g},inf,{hist.overflow}\n")
