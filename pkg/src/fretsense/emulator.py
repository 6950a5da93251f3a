"""Software twin of the sensing fretboard.

Models the chain finger force -> flexure deflection -> photointerrupter
counts -> 12-bit ADC, with per-fret temperature drift, additive sensor
noise, and the sequential fret scan. Scripted press scenarios drive it;
output is a stream of RawFrames at the nominal 20 Hz frame rate.

The emulator is deliberately simple where the real optics are complicated:
counts grow linearly with deflection (optionally with a small quadratic
term to stress calibration), and one stiffness constant per module captures
the flexure, scaled with local board width. All tunables live in
EmulatorConfig and can be loaded from a key-value text file.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from .model import (
    ADC_MAX,
    FORCE_MAX_N,
    FRAME_PERIOD_MS,
    N_ACTIVE_FRETS,
    N_STRINGS,
    FretboardGeometry,
    FretsenseError,
    ModuleId,
    RawFrame,
)
from .wire import encode_frame


class ScenarioError(FretsenseError):
    """A scenario file or event is malformed."""


class ConfigError(FretsenseError):
    """An emulator config file is malformed."""


class StreamAborted(FretsenseError):
    """The frame sink failed mid-stream; frames_sent is the partial count."""

    def __init__(self, frames_sent: int, cause: Exception):
        super().__init__(f"sink failed after {frames_sent} frames: {cause}")
        self.frames_sent = frames_sent


@dataclass(frozen=True)
class SensorParams:
    """Photointerrupter + amplifier chain, collapsed to one transfer curve.

    counts = baseline + gain * d * (1 + nonlinearity * d) + drift + noise,
    rounded and clamped to the 12-bit range, with d the deflection in mm.
    """

    baseline_counts: float = 800.0
    gain: float = 12000.0  # counts per mm of approach
    nonlinearity: float = 0.0
    noise_sigma: float = 2.0  # counts, std-dev of additive Gaussian noise

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        # Monotonic over the 0..0.3 mm operating range: d/dd of the transfer
        # term is gain * (1 + 2*nonlinearity*d), which must stay positive.
        if 1.0 + 2.0 * self.nonlinearity * 0.3 <= 0:
            raise ValueError("nonlinearity too negative: transfer not monotone")


DEFLECTION_AT_FULL_SCALE_MM = 0.2  # flexure design point: 0.2 mm at 25 N
REFERENCE_STIFFNESS_N_PER_MM = FORCE_MAX_N / DEFLECTION_AT_FULL_SCALE_MM  # 125


@dataclass(frozen=True)
class FlexureParams:
    """Per-module linear stiffness in N/mm (12x6 grid)."""

    stiffness: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.stiffness, dtype=float)
        if k.shape != (N_ACTIVE_FRETS, N_STRINGS):
            raise ValueError("stiffness grid must be 12x6")
        if not np.all(k > 0):
            raise ValueError("stiffness must be positive")
        dmax = FORCE_MAX_N / k
        if dmax.min() < 0.15 or dmax.max() > 0.30:
            raise ValueError("full-scale deflection outside plausible 0.15..0.30 mm")
        k = k.copy()
        k.flags.writeable = False
        object.__setattr__(self, "stiffness", k)

    @classmethod
    def from_geometry(
        cls,
        geometry: FretboardGeometry,
        reference_stiffness: float = REFERENCE_STIFFNESS_N_PER_MM,
    ) -> "FlexureParams":
        """Stiffness proportional to local board width (wider flexure is
        stiffer), anchored at fret 1."""
        widths = np.array([geometry.width(f) for f in range(1, N_ACTIVE_FRETS + 1)])
        per_fret = reference_stiffness * widths / widths[0]
        return cls(np.repeat(per_fret[:, None], N_STRINGS, axis=1))


@dataclass(frozen=True)
class DriftParams:
    """Per-fret temperature offset model, identical for all 7 sensors of a
    fret (the physical assumption that makes differential compensation work).

    mode: "off", "walk" (bounded random walk), or "fixed" (static offsets,
    used by tests and fault-injection scenarios).
    """

    mode: str = "walk"
    step_sigma: float = 0.05  # counts per frame
    bound: float = 200.0  # counts, hard clamp
    offsets: tuple = tuple([0.0] * N_ACTIVE_FRETS)  # for mode "fixed"

    def __post_init__(self):
        if self.mode not in ("off", "walk", "fixed"):
            raise ValueError(f"unknown drift mode {self.mode!r}")
        if self.step_sigma < 0 or self.bound < 0:
            raise ValueError("drift parameters must be >= 0")
        if len(self.offsets) != N_ACTIVE_FRETS:
            raise ValueError("fixed drift needs one offset per fret")


@dataclass(frozen=True)
class ScanConfig:
    """Fret scan sequencing. Disabling isolation while activating more than
    one fret at a time adds a cross-fret leakage term and marks frames
    contaminated; that path exists purely for negative testing."""

    isolation_enabled: bool = True
    frets_active_simultaneously: int = 1
    leak_fraction: float = 0.05

    def __post_init__(self):
        if self.frets_active_simultaneously < 1:
            raise ValueError("at least one fret must be active")
        if not (0 <= self.leak_fraction <= 1):
            raise ValueError("leak_fraction must be in [0, 1]")


@dataclass(frozen=True)
class PressEvent:
    """One scripted press: trapezoidal force profile at a single module."""

    module: ModuleId
    start_ms: float
    attack_ms: float
    hold_ms: float
    release_ms: float
    peak_force: float

    def __post_init__(self):
        if self.start_ms < 0:
            raise ScenarioError("start_ms must be >= 0")
        if min(self.attack_ms, self.hold_ms, self.release_ms) < 0:
            raise ScenarioError("durations must be >= 0")
        if not (0 <= self.peak_force <= FORCE_MAX_N):
            raise ScenarioError(f"peak_force outside [0, {FORCE_MAX_N}]")

    def force_at(self, t_ms: float) -> float:
        """Trapezoid: linear attack to peak, hold, linear release."""
        dt = t_ms - self.start_ms
        if dt < 0:
            return 0.0
        if dt < self.attack_ms:
            return self.peak_force * dt / self.attack_ms
        dt -= self.attack_ms
        if dt <= self.hold_ms:
            return self.peak_force
        dt -= self.hold_ms
        if dt < self.release_ms:
            return self.peak_force * (1.0 - dt / self.release_ms)
        return 0.0


def scenario_force(scenario: Sequence[PressEvent], t_ms: float) -> np.ndarray:
    """Instantaneous 12x6 force grid of a scenario.

    Overlapping events on the same module combine by maximum; the result is
    clamped to the sensing range.
    """
    grid = np.zeros((N_ACTIVE_FRETS, N_STRINGS))
    for ev in scenario:
        f = ev.force_at(t_ms)
        r, c = ev.module.fret - 1, ev.module.string - 1
        if f > grid[r, c]:
            grid[r, c] = f
    return np.clip(grid, 0.0, FORCE_MAX_N)


def parse_scenario(text: str) -> list[PressEvent]:
    """Parse the line-oriented scenario grammar.

    One event per line: `fret string start_ms attack_ms hold_ms release_ms
    peak_N`; `#` starts a comment; blank lines are ignored.
    """
    events = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 7:
            raise ScenarioError(f"line {lineno}: expected 7 fields, got {len(fields)}")
        try:
            fret, string = int(fields[0]), int(fields[1])
            start, attack, hold, release, peak = (float(v) for v in fields[2:])
            events.append(
                PressEvent(ModuleId(fret, string), start, attack, hold, release, peak)
            )
        except (ValueError, FretsenseError) as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from None
    return events


def load_scenario(path) -> list[PressEvent]:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


@dataclass
class EmulatorConfig:
    """Everything tunable about the emulated instrument, incl. the RNG seed
    and the calibration rig's load-cell accuracy."""

    geometry: FretboardGeometry = field(default_factory=FretboardGeometry)
    sensor: SensorParams = field(default_factory=SensorParams)
    drift: DriftParams = field(default_factory=DriftParams)
    scan: ScanConfig = field(default_factory=ScanConfig)
    reference_stiffness: float = REFERENCE_STIFFNESS_N_PER_MM
    truth_sigma: float = 0.025  # N, load-cell ground-truth noise
    seed: int = 0
    gain_overrides: dict = field(default_factory=dict)  # (fret, string) -> gain

    def flexure(self) -> FlexureParams:
        return FlexureParams.from_geometry(self.geometry, self.reference_stiffness)

    def quiet(self) -> "EmulatorConfig":
        """Copy with every stochastic term disabled (noise, drift, rig)."""
        return replace(
            self,
            sensor=replace(self.sensor, noise_sigma=0.0),
            drift=replace(self.drift, mode="off"),
            truth_sigma=0.0,
        )


_CONFIG_BOOL = {"true": True, "false": False, "1": True, "0": False}


def parse_config(text: str) -> EmulatorConfig:
    """Parse the key-value emulator config grammar (see docs/file_formats.md)."""
    values: dict = {}
    overrides: dict = {}
    drift_offsets = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if key == "gain_override":
                f, s, g = rest.split()
                overrides[(int(f), int(s))] = float(g)
            elif key == "drift_offsets":
                drift_offsets = tuple(float(v) for v in rest.split())
            elif key in ("isolation_enabled",):
                values[key] = _CONFIG_BOOL[rest.lower()]
            elif key in ("seed", "frets_active_simultaneously"):
                values[key] = int(rest)
            elif key == "drift_mode":
                values[key] = rest
            elif key in (
                "baseline_counts",
                "gain",
                "nonlinearity",
                "noise_sigma",
                "drift_step_sigma",
                "drift_bound",
                "leak_fraction",
                "scale_length",
                "nut_width",
                "fret12_width",
                "reference_stiffness",
                "truth_sigma",
            ):
                values[key] = float(rest)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None

    try:
        geometry = FretboardGeometry(
            scale_length=values.pop("scale_length", 650.0),
            nut_width=values.pop("nut_width", 52.0),
            width_at_fret12=values.pop("fret12_width", 62.0),
        )
        sensor = SensorParams(
            baseline_counts=values.pop("baseline_counts", 800.0),
            gain=values.pop("gain", 12000.0),
            nonlinearity=values.pop("nonlinearity", 0.0),
            noise_sigma=values.pop("noise_sigma", 2.0),
        )
        drift = DriftParams(
            mode=values.pop("drift_mode", "walk"),
            step_sigma=values.pop("drift_step_sigma", 0.05),
            bound=values.pop("drift_bound", 200.0),
            offsets=drift_offsets or tuple([0.0] * N_ACTIVE_FRETS),
        )
        scan = ScanConfig(
            isolation_enabled=values.pop("isolation_enabled", True),
            frets_active_simultaneously=values.pop("frets_active_simultaneously", 1),
            leak_fraction=values.pop("leak_fraction", 0.05),
        )
        return EmulatorConfig(
            geometry=geometry,
            sensor=sensor,
            drift=drift,
            scan=scan,
            reference_stiffness=values.pop("reference_stiffness", 125.0),
            truth_sigma=values.pop("truth_sigma", 0.025),
            seed=values.pop("seed", 0),
            gain_overrides=overrides,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> EmulatorConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def deflection(force, stiffness):
    """Flexure deflection in mm under a force: linear elastic, force/stiffness."""
    force = np.asarray(force, dtype=float)
    if np.any(force < 0):
        raise ValueError("force must be >= 0")
    out = force / stiffness
    return float(out) if out.ndim == 0 else out


def sensor_counts(defl, params: SensorParams, drift=0.0, noise=0.0):
    """ADC counts for a deflection (mm): transfer curve + drift + noise,
    rounded and clamped to [0, 4095]. Accepts scalars or arrays."""
    defl = np.asarray(defl, dtype=float)
    if np.any(defl < 0):
        raise ValueError("deflection must be >= 0")
    raw = (
        params.baseline_counts
        + params.gain * defl * (1.0 + params.nonlinearity * defl)
        + drift
        + noise
    )
    counts = np.clip(np.rint(raw), 0, ADC_MAX).astype(np.uint16)
    return int(counts) if counts.ndim == 0 else counts


class FretboardEmulator:
    """Owns the instrument's mutable state: drift walk, frame counter, RNG.

    Single logical ticker; hand frames to consumers, do not share the
    emulator itself across tasks.
    """

    def __init__(
        self,
        config: EmulatorConfig | None = None,
        scenario: Sequence[PressEvent] = (),
        seed: int | None = None,
    ):
        self.config = config or EmulatorConfig()
        self.scenario = list(scenario)
        self._rng = np.random.default_rng(
            self.config.seed if seed is None else seed
        )
        self._stiffness = self.config.flexure().stiffness
        self._gain = np.full((N_ACTIVE_FRETS, N_STRINGS), self.config.sensor.gain)
        for (f, s), g in self.config.gain_overrides.items():
            self._gain[f - 1, s - 1] = g
        drift = self.config.drift
        self._drift = (
            np.array(drift.offsets, dtype=float)
            if drift.mode == "fixed"
            else np.zeros(N_ACTIVE_FRETS)
        )
        self._seq = 0

    @property
    def seq(self) -> int:
        return self._seq

    def set_drift_offsets(self, offsets) -> None:
        """Pin the per-fret drift to fixed values (test/fault injection)."""
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != (N_ACTIVE_FRETS,):
            raise ValueError("need one offset per fret")
        self.config = replace(
            self.config, drift=replace(self.config.drift, mode="fixed")
        )
        self._drift = offsets.copy()

    def frame_for_forces(self, forces: np.ndarray, t_ms: float) -> RawFrame:
        """Scan one frame with an explicit 12x6 force grid applied.

        This is the calibration rig's entry point; scan_frame() layers the
        scripted scenario on top.
        """
        sensor = self.config.sensor
        forces = np.clip(np.asarray(forces, dtype=float), 0.0, FORCE_MAX_N)
        defl = forces / self._stiffness
        sense = sensor.baseline_counts + self._gain * defl * (
            1.0 + sensor.nonlinearity * defl
        )

        contaminated = False
        scan = self.config.scan
        if not scan.isolation_enabled and scan.frets_active_simultaneously > 1:
            # Light leaks in from the other frets lit during this slot.
            leak = np.zeros_like(sense)
            for offset in range(1, scan.frets_active_simultaneously):
                shifted = np.zeros_like(sense)
                shifted[: N_ACTIVE_FRETS - offset] = (
                    self._gain[offset:] * defl[offset:]
                )
                leak += scan.leak_fraction * shifted
            sense = sense + leak
            contaminated = True

        # Reference sensors face a fixed surface: zero deflection, always.
        grid = np.column_stack(
            [sense, np.full(N_ACTIVE_FRETS, sensor.baseline_counts)]
        )
        grid += self._drift[:, None]
        if sensor.noise_sigma > 0:
            grid += self._rng.normal(0.0, sensor.noise_sigma, grid.shape)
        counts = np.clip(np.rint(grid), 0, ADC_MAX).astype(np.uint16)

        frame = RawFrame(
            seq=self._seq,
            timestamp_ms=int(t_ms),
            counts=counts,
            contaminated=contaminated,
        )
        self._seq += 1
        self._advance_drift()
        return frame

    def scan_frame(self, t_ms: float) -> RawFrame:
        """One full fret-sequence scan at scenario time t_ms."""
        return self.frame_for_forces(scenario_force(self.scenario, t_ms), t_ms)

    def _advance_drift(self) -> None:
        d = self.config.drift
        if d.mode == "walk" and d.step_sigma > 0:
            step = self._rng.normal(0.0, d.step_sigma, N_ACTIVE_FRETS)
            self._drift = np.clip(self._drift + step, -d.bound, d.bound)

    def frames(self, duration_ms: float) -> Iterator[RawFrame]:
        """Frames covering t = 0..duration_ms at the 50 ms frame period
        (floor(duration/50) + 1 frames)."""
        for n in range(int(duration_ms // FRAME_PERIOD_MS) + 1):
            yield self.scan_frame(n * FRAME_PERIOD_MS)


def run_stream(
    emulator: FretboardEmulator,
    duration_ms: float,
    sink: Callable[[bytes], None],
    realtime: bool = False,
) -> int:
    """Emit encoded frames to a sink; returns the frame count.

    In real-time mode frames are paced on absolute 50 ms deadlines from a
    monotonic clock, so pacing error does not accumulate. A sink failure
    aborts the stream with the partial count attached.
    """
    sent = 0
    start = time.monotonic()
    for frame in emulator.frames(duration_ms):
        if realtime:
            deadline = start + frame.timestamp_ms / 1000.0
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        try:
            sink(encode_frame(frame))
        except Exception as exc:
            raise StreamAborted(sent, exc) from exc
        sent += 1
    return sent
