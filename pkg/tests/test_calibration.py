import numpy as np
import pytest

from fretsense.calibration import (
    CalibrationCurve,
    CalibrationRig,
    CalibrationSample,
    BaselineReference,
    CalsetFormatError,
    CompensationUnavailableError,
    DegenerateFitError,
    InsufficientDataError,
    RMSE_BIN_EDGES,
    UnstableBaselineError,
    WORST_BIN_EDGES,
    capture_baseline,
    counts_to_force,
    fit_linear,
    fixed_histogram,
    fleet_report,
    read_calset,
    read_raw_samples,
    read_results,
    sweep_schedule,
    temp_compensate,
    validation_metrics,
    write_calset,
    write_raw_samples,
    write_results,
    ValidationResult,
)
from fretsense.emulator import EmulatorConfig, FretboardEmulator
from fretsense.model import ModuleId, RawFrame, all_modules


M = ModuleId(3, 2)


def make_samples(counts, forces, module=M):
    return [
        CalibrationSample(module=module, applied_force=f, counts=c)
        for c, f in zip(counts, forces)
    ]


def make_raw_frame(sense=800, ref=800, seq=0):
    counts = np.full((12, 7), sense, dtype=int)
    counts[:, 6] = ref
    return RawFrame(seq=seq, timestamp_ms=seq * 50, counts=counts)


# --- sweep schedule ----------------------------------------------------------


def test_sweep_schedule_shape():
    schedule = sweep_schedule()
    # Oracle: two trials of (0..25 up, 24..0 down) in 1 N steps.
    one_trial = [float(v) for v in range(26)] + [float(v) for v in range(24, -1, -1)]
    assert schedule == one_trial * 2
    assert len(schedule) == 102
    assert schedule[0] == 0.0 and schedule[-1] == 0.0
    assert max(schedule) == 25.0


# --- linear fit --------------------------------------------------------------


def test_fit_linear_exact_line():
    counts = np.linspace(800, 3200, 25)
    forces = 0.01 * counts - 8.0
    curve = fit_linear(make_samples(counts, forces))
    assert curve.slope == pytest.approx(0.01, abs=1e-12)
    assert curve.intercept == pytest.approx(-8.0, abs=1e-9)
    assert curve.r_squared == pytest.approx(1.0, abs=1e-12)
    assert curve.n_samples == 25
    assert curve.module == M


def test_fit_linear_degenerate_and_insufficient():
    counts = np.full(10, 1500.0)
    forces = np.linspace(0, 25, 10)
    with pytest.raises(DegenerateFitError):
        fit_linear(make_samples(counts, forces))
    with pytest.raises(InsufficientDataError):
        fit_linear(make_samples([800.0, 900.0], [0.0, 1.0]))
    # Constant forces with varying counts: no line worth having either.
    with pytest.raises(DegenerateFitError):
        fit_linear(make_samples(np.linspace(800, 900, 5), np.full(5, 10.0)))


def test_fit_linear_matches_lstsq_oracle():
    rng = np.random.default_rng(10)
    counts = rng.uniform(800, 3200, 102)
    forces = 0.0104 * counts - 8.3 + rng.normal(0, 0.05, 102)
    curve = fit_linear(make_samples(counts, forces))
    # Independent oracle: solve the normal equations via lstsq.
    design = np.column_stack([counts, np.ones_like(counts)])
    (slope, intercept), *_ = np.linalg.lstsq(design, forces, rcond=None)
    assert curve.slope == pytest.approx(slope, rel=1e-9)
    assert curve.intercept == pytest.approx(intercept, rel=1e-9)
    pred = design @ [slope, intercept]
    r2 = 1 - ((forces - pred) ** 2).sum() / ((forces - forces.mean()) ** 2).sum()
    assert curve.r_squared == pytest.approx(r2, rel=1e-9)


def test_fit_linear_scale_consistency():
    rng = np.random.default_rng(11)
    counts = rng.uniform(800, 3200, 60)
    forces = 0.01 * counts - 7.0 + rng.normal(0, 0.02, 60)
    base = fit_linear(make_samples(counts, forces))
    a, b = 3.5, 0.25
    scaled = fit_linear(make_samples(counts * a, forces * b))
    assert scaled.slope == pytest.approx(base.slope * b / a, rel=1e-9)
    assert scaled.intercept == pytest.approx(base.intercept * b, rel=1e-9)
    assert scaled.r_squared == pytest.approx(base.r_squared, rel=1e-9)


def test_curve_validation():
    with pytest.raises(ValueError):
        CalibrationCurve(M, slope=0.0, intercept=0.0, r_squared=1.0, n_samples=10)
    with pytest.raises(ValueError):
        CalibrationCurve(M, slope=0.01, intercept=0.0, r_squared=1.5, n_samples=10)


# --- compensation ------------------------------------------------------------


def test_temp_compensate_identity_without_drift():
    baseline = BaselineReference(np.full(12, 800))
    frame = make_raw_frame(sense=1500, ref=800)
    counts, clamped = temp_compensate(frame, baseline)
    assert np.all(counts == 1500)
    assert not clamped.any()


def test_temp_compensate_cancels_common_mode_exactly():
    baseline = BaselineReference(np.full(12, 800))
    clean = make_raw_frame(sense=1500, ref=800)
    drifted_counts = np.array(clean.counts, dtype=int)
    drifted_counts[3, :] += 100  # all 7 sensors of fret 4
    drifted = RawFrame(seq=0, timestamp_ms=0, counts=drifted_counts)
    out_clean, _ = temp_compensate(clean, baseline)
    out_drifted, _ = temp_compensate(drifted, baseline)
    assert np.array_equal(out_clean, out_drifted)


def test_temp_compensate_per_fret_elementwise_oracle():
    rng = np.random.default_rng(12)
    baseline = BaselineReference(np.full(12, 800))
    sense = rng.integers(900, 3000, (12, 6))
    drift = rng.integers(-150, 151, 12)
    counts = np.column_stack([sense + drift[:, None], 800 + drift])
    frame = RawFrame(seq=0, timestamp_ms=0, counts=counts)
    out, clamped = temp_compensate(frame, baseline)
    # Oracle: direct per-cell subtraction of the fret's reference excursion.
    for f in range(12):
        for s in range(6):
            expected = counts[f, s] - (counts[f, 6] - 800)
            assert out[f, s] == expected
    assert not clamped.any()


def test_temp_compensate_requires_baseline_and_flags_clamp():
    with pytest.raises(CompensationUnavailableError):
        temp_compensate(make_raw_frame(), None)
    baseline = BaselineReference(np.full(12, 800))
    # Large negative reference excursion pushes compensated counts past 4095.
    counts = np.full((12, 7), 4000, dtype=int)
    counts[:, 6] = 100
    frame = RawFrame(seq=0, timestamp_ms=0, counts=counts)
    out, clamped = temp_compensate(frame, baseline)
    assert clamped.all()
    assert out.max() == 4095


# --- curve application -------------------------------------------------------


def test_counts_to_force_affine_and_clamped():
    curve = CalibrationCurve(M, slope=0.01, intercept=-8.0, r_squared=1.0, n_samples=102)
    assert counts_to_force(800, curve) == pytest.approx(0.0)  # zero crossing
    assert counts_to_force(500, curve) == 0.0  # clamped below
    assert counts_to_force(2000, curve) == pytest.approx(0.01 * 2000 - 8.0)
    assert counts_to_force(1_000_000, curve) == 25.0  # clamped above
    forces = counts_to_force(np.array([800.0, 2000.0]), curve)
    assert forces == pytest.approx([0.0, 12.0])


# --- metrics -----------------------------------------------------------------


def test_validation_metrics_hand_values():
    rmse, worst = validation_metrics([0.3, -0.3])
    assert rmse == pytest.approx(0.3)
    assert worst == pytest.approx(1.2)  # 0.3 / 25 * 100
    rmse, worst = validation_metrics([0.0, 0.0, 0.0])
    assert rmse == 0.0 and worst == 0.0


# --- baseline capture --------------------------------------------------------


def test_capture_baseline_constant_and_mean():
    frames = [make_raw_frame(ref=800, seq=i) for i in range(20)]
    assert np.all(capture_baseline(frames).per_fret == 800)
    alternating = [make_raw_frame(ref=799 + (i % 2) * 2, seq=i) for i in range(20)]
    assert np.all(capture_baseline(alternating).per_fret == 800)


def test_capture_baseline_guards():
    noisy = [make_raw_frame(ref=800 + (i % 2) * 20, seq=i) for i in range(20)]
    with pytest.raises(UnstableBaselineError):
        capture_baseline(noisy)  # std-dev 10 counts > 5-count guard
    with pytest.raises(UnstableBaselineError):
        capture_baseline([make_raw_frame() for _ in range(5)], n_frames=20)


# --- rig end to end ----------------------------------------------------------


def test_rig_sweep_and_fit_quiet():
    emu = FretboardEmulator(EmulatorConfig().quiet())
    rig = CalibrationRig(emu)
    samples = rig.sweep(M)
    assert len(samples) == 102
    assert samples[0].applied_force == 0.0
    assert max(s.applied_force for s in samples) == 25.0
    curve = fit_linear(samples)
    assert curve.r_squared > 0.9999


def test_rig_validation_quiet_is_quantization_limited():
    emu = FretboardEmulator(EmulatorConfig().quiet())
    rig = CalibrationRig(emu)
    curve = rig.calibrate(M)
    result = rig.validate(M, curve, n_trials=50, seed=5)
    # Noiseless source with a near-exact curve: errors come from count
    # quantization, bounded by one count's worth of force.
    assert result.rmse <= abs(curve.slope) * 1.0
    assert result.n_trials == 50


def test_rig_validation_deterministic_under_seed():
    emu = FretboardEmulator(EmulatorConfig().quiet())
    rig = CalibrationRig(emu)
    curve = rig.calibrate(M)
    a = rig.validate(M, curve, n_trials=20, seed=9)
    b = rig.validate(M, curve, n_trials=20, seed=9)
    assert a == b


def test_rig_drift_compensation_keeps_fit_valid():
    # Static drift injected between baseline capture and the sweep must not
    # move the fitted curve (compensation anchors to the captured baseline).
    # Integer offsets shift sense and reference counts identically, so the
    # subtraction cancels them without any rounding residual.
    emu_a = FretboardEmulator(EmulatorConfig().quiet())
    rig_a = CalibrationRig(emu_a)
    curve_a = fit_linear(rig_a.sweep(M))

    emu_b = FretboardEmulator(EmulatorConfig().quiet())
    rig_b = CalibrationRig(emu_b)
    emu_b.set_drift_offsets(np.arange(12) * 25 - 150)
    curve_b = fit_linear(rig_b.sweep(M))

    assert curve_b.slope == pytest.approx(curve_a.slope, rel=1e-12)
    assert curve_b.intercept == pytest.approx(curve_a.intercept, abs=1e-12)


# --- fleet report ------------------------------------------------------------


def result_for(module, rmse=0.1, worst=1.0, n=50):
    return ValidationResult(
        module=module, rmse=rmse, worst_error_pct_fso=worst, n_trials=n
    )


def test_fleet_report_all_good():
    report = fleet_report([result_for(m) for m in all_modules()])
    assert report.fraction_rmse_under_0p4 == 1.0
    assert report.fraction_worst_under_5pct == 1.0
    assert report.complete
    assert report.missing == ()


def test_fleet_report_58_of_72():
    modules = all_modules()
    results = [
        result_for(m, rmse=0.1 if i < 58 else 0.8) for i, m in enumerate(modules)
    ]
    report = fleet_report(results)
    assert report.fraction_rmse_under_0p4 == pytest.approx(58 / 72, abs=1e-12)


def test_fleet_report_strict_inequality_at_thresholds():
    modules = all_modules()
    results = [result_for(m, rmse=0.1, worst=1.0) for m in modules[:-1]]
    results.append(result_for(modules[-1], rmse=0.4, worst=5.0))
    report = fleet_report(results)
    assert report.fraction_rmse_under_0p4 == pytest.approx(71 / 72)
    assert report.fraction_worst_under_5pct == pytest.approx(71 / 72)


def test_fleet_report_flags_incomplete():
    report = fleet_report([result_for(m) for m in all_modules()[:70]])
    assert not report.complete
    assert len(report.missing) == 2


def test_fixed_histogram_against_binning_oracle():
    rng = np.random.default_rng(13)
    values = rng.uniform(0, 1.2, 300)
    hist = fixed_histogram(values, RMSE_BIN_EDGES)
    # Brute-force oracle: count membership in half-open bins one by one.
    for i, (lo, hi) in enumerate(zip(RMSE_BIN_EDGES[:-1], RMSE_BIN_EDGES[1:])):
        assert hist.counts[i] == int(((values >= lo) & (values < hi)).sum())
    assert hist.overflow == int((values >= 1.0).sum())
    assert sum(hist.counts) + hist.overflow == len(values)


def test_histogram_boundary_lands_in_right_bin():
    hist = fixed_histogram([0.10], RMSE_BIN_EDGES)
    # 0.10 sits on an edge: half-open bins put it in [0.10, 0.15).
    assert hist.counts[2] == 1
    assert sum(hist.counts) == 1
    assert len(WORST_BIN_EDGES) == 21


# --- file formats ------------------------------------------------------------


def test_calset_round_trip(tmp_path):
    curves = [
        CalibrationCurve(m, slope=0.0104 + m.index * 1e-6, intercept=-8.3,
                         r_squared=0.9991, n_samples=102)
        for m in all_modules()
    ]
    path = tmp_path / "calset.txt"
    write_calset(curves, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# fretsense-calset 1"
    assert len(lines) == 73
    loaded = read_calset(path)
    assert len(loaded) == 72
    for c in curves:
        got = loaded[c.module]
        assert got.slope == pytest.approx(c.slope, rel=1e-8)
        assert got.n_samples == 102


def test_calset_format_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a header\n")
    with pytest.raises(CalsetFormatError):
        read_calset(path)
    path.write_text("# fretsense-calset 1\n13 2 0.01 -8 0.999 102\n")
    with pytest.raises(CalsetFormatError, match="line 2"):
        read_calset(path)
    path.write_text("# fretsense-calset 1\n1 1 0.01 -8 0.999 102\n1 1 0.01 -8 0.999 102\n")
    with pytest.raises(CalsetFormatError, match="duplicate"):
        read_calset(path)


def test_raw_samples_round_trip(tmp_path):
    samples = make_samples([800.5, 1600.25, 3200.0], [0.0, 12.5, 25.0])
    path = tmp_path / "sweep.txt"
    write_raw_samples(samples, path)
    loaded = read_raw_samples(path)
    assert loaded == samples
    assert path.read_text().splitlines()[0] == "3 2 0 800.5"


def test_results_round_trip(tmp_path):
    results = [result_for(m, rmse=0.03 + m.index * 1e-4) for m in all_modules()]
    path = tmp_path / "validation.txt"
    write_results(results, path)
    loaded = read_results(path)
    assert len(loaded) == 72
    assert loaded[0].rmse == pytest.approx(results[0].rmse, rel=1e-8)
