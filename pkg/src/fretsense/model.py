"""Shared domain model: module addressing, fretboard geometry, frame types.

Everything here is an immutable value object; instances can be shared freely
between threads and tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_ACTIVE_FRETS = 12
N_DUMMY_FRETS = 7
N_FRETS_TOTAL = N_ACTIVE_FRETS + N_DUMMY_FRETS
N_STRINGS = 6
N_MODULES = N_ACTIVE_FRETS * N_STRINGS  # 72

FORCE_MIN_N = 0.0
FORCE_MAX_N = 25.0
FRAME_RATE_HZ = 20
FRAME_PERIOD_MS = 1000 // FRAME_RATE_HZ  # 50

ADC_BITS = 12
ADC_MAX = (1 << ADC_BITS) - 1  # 4095

REPORTED_RESOLUTION_N = 0.1

# Column index of the per-fret reference sensor in a RawFrame counts grid.
REF_COL = N_STRINGS


class FretsenseError(Exception):
    """Base class for all errors raised by this package."""


class AddressingError(FretsenseError):
    """A (fret, string) pair or linear index is out of range."""


@dataclass(frozen=True)
class SystemConstants:
    """Top-level system parameters. The default instance is `CONSTANTS`."""

    n_active_frets: int = N_ACTIVE_FRETS
    n_dummy_frets: int = N_DUMMY_FRETS
    n_strings: int = N_STRINGS
    force_min: float = FORCE_MIN_N
    force_max: float = FORCE_MAX_N
    frame_rate: float = FRAME_RATE_HZ
    adc_bits: int = ADC_BITS
    reported_resolution: float = REPORTED_RESOLUTION_N

    def __post_init__(self):
        if self.n_active_frets * self.n_strings != N_MODULES:
            raise ValueError("active frets x strings must cover 72 modules")
        if self.adc_bits < 1:
            raise ValueError("adc_bits must be positive")

    @property
    def adc_max(self) -> int:
        return (1 << self.adc_bits) - 1


CONSTANTS = SystemConstants()


def module_index(fret: int, string: int) -> int:
    """Linear index 0..71 of the sensing module at (fret, string).

    Frets are numbered 1..12, strings 1..6; the mapping is the bijection
    idx = (fret-1)*6 + (string-1).
    """
    if not (1 <= fret <= N_ACTIVE_FRETS):
        raise AddressingError(f"fret {fret} outside 1..{N_ACTIVE_FRETS}")
    if not (1 <= string <= N_STRINGS):
        raise AddressingError(f"string {string} outside 1..{N_STRINGS}")
    return (fret - 1) * N_STRINGS + (string - 1)


def module_from_index(idx: int) -> "ModuleId":
    """Inverse of module_index."""
    if not (0 <= idx < N_MODULES):
        raise AddressingError(f"module index {idx} outside 0..{N_MODULES - 1}")
    return ModuleId(fret=idx // N_STRINGS + 1, string=idx % N_STRINGS + 1)


@dataclass(frozen=True, order=True)
class ModuleId:
    """Address of one sensing module: fret 1..12, string 1..6."""

    fret: int
    string: int

    def __post_init__(self):
        module_index(self.fret, self.string)  # range check

    @property
    def index(self) -> int:
        return module_index(self.fret, self.string)

    @classmethod
    def from_index(cls, idx: int) -> "ModuleId":
        return module_from_index(idx)

    def __str__(self) -> str:
        return f"f{self.fret}s{self.string}"


def all_modules():
    """All 72 ModuleIds in linear-index order."""
    return [module_from_index(i) for i in range(N_MODULES)]


def fret_position(scale_length: float, fret: int) -> float:
    """Distance from the nut to a fret, in the same unit as scale_length.

    Standard equal-temperament rule: d_k = L * (1 - 2**(-k/12)).
    Fret 0 is the nut itself.
    """
    if scale_length <= 0:
        raise ValueError("scale_length must be positive")
    if fret < 0:
        raise ValueError("fret must be >= 0")
    return scale_length * (1.0 - 2.0 ** (-fret / 12.0))


@dataclass(frozen=True)
class FretboardGeometry:
    """Physical board layout.

    The dimensions here are classical-guitar conventions (650 mm scale,
    52 mm nut tapering to 62 mm at the 12th fret); they only influence the
    emulator's per-fret stiffness variation and UI layout, and the
    calibration pipeline absorbs them entirely.
    """

    scale_length: float = 650.0
    nut_width: float = 52.0
    width_at_fret12: float = 62.0
    n_frets: int = N_FRETS_TOTAL

    def __post_init__(self):
        if self.scale_length <= 0:
            raise ValueError("scale_length must be positive")
        pos = self.positions()
        if not np.all(np.diff(pos) > 0):
            raise ValueError("fret positions must be strictly increasing")

    def position(self, fret: int) -> float:
        """Distance nut -> fret in mm (fret 0 = nut)."""
        if fret > self.n_frets:
            raise ValueError(f"fret {fret} beyond last fret {self.n_frets}")
        return fret_position(self.scale_length, fret)

    def positions(self) -> np.ndarray:
        """Positions of frets 1..n_frets in mm."""
        return np.array([self.position(k) for k in range(1, self.n_frets + 1)])

    def width(self, fret: int) -> float:
        """Board width at a fret: linear taper in distance from the nut,
        nut_width at fret 0 through width_at_fret12 at the octave fret,
        extrapolated beyond."""
        d12 = self.position(N_ACTIVE_FRETS)
        t = self.position(fret) / d12
        return self.nut_width + (self.width_at_fret12 - self.nut_width) * t


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RawFrame:
    """One scan cycle: 12 frets x (6 string sensors + 1 reference), raw ADC counts.

    `counts[f-1, s-1]` is the string sensor at (fret f, string s);
    `counts[f-1, REF_COL]` is fret f's reference sensor. `contaminated` marks
    frames produced with light isolation disabled (emulator fault injection;
    never carried on the wire).
    """

    seq: int
    timestamp_ms: int
    counts: np.ndarray
    contaminated: bool = False

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (N_ACTIVE_FRETS, N_STRINGS + 1):
            raise ValueError(f"counts grid must be 12x7, got {counts.shape}")
        if counts.min() < 0 or counts.max() > ADC_MAX:
            raise ValueError("ADC counts outside [0, 4095]")
        object.__setattr__(self, "counts", _readonly(counts.astype(np.uint16)))

    def sense_counts(self) -> np.ndarray:
        """The 12x6 string-sensor grid (reference column stripped)."""
        return self.counts[:, :N_STRINGS]

    def ref_counts(self) -> np.ndarray:
        """The 12 per-fret reference readings."""
        return self.counts[:, REF_COL]


@dataclass(frozen=True, eq=False)
class ForceFrame:
    """Calibrated per-module forces (newtons) plus over-threshold flags."""

    seq: int
    timestamp_ms: int
    forces: np.ndarray
    over_threshold: np.ndarray

    def __post_init__(self):
        forces = np.asarray(self.forces, dtype=float)
        over = np.asarray(self.over_threshold, dtype=bool)
        if forces.shape != (N_ACTIVE_FRETS, N_STRINGS):
            raise ValueError(f"forces grid must be 12x6, got {forces.shape}")
        if over.shape != forces.shape:
            raise ValueError("over_threshold grid must match forces")
        # Forces are clamped to the sensing range no matter what produced them.
        forces = np.clip(forces, FORCE_MIN_N, FORCE_MAX_N)
        object.__setattr__(self, "forces", _readonly(forces))
        object.__setattr__(self, "over_threshold", _readonly(over))
