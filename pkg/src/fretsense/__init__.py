"""fretsense: software twin of a 72-point force-sensing guitar fretboard.

Subsystems:

- model: module addressing, board geometry, frame value types
- emulator: physics-grounded device emulation and scenario scripting
- wire: binary frame codec (CRC-16 framing) and the session text format
- calibration: sweeps, linear fits, drift compensation, fleet validation
- service: live acquisition pipeline with pub/sub clients and recording
- cli: operator entry points (emulate / calibrate / validate / report /
  serve / replay)
"""

from .model import (
    ADC_MAX,
    CONSTANTS,
    FORCE_MAX_N,
    FRAME_PERIOD_MS,
    FRAME_RATE_HZ,
    N_ACTIVE_FRETS,
    N_MODULES,
    N_STRINGS,
    ForceFrame,
    FretboardGeometry,
    FretsenseError,
    ModuleId,
    RawFrame,
    all_modules,
    fret_position,
    module_from_index,
    module_index,
)

__version__ = "0.1.0"

__all__ = [
    "ADC_MAX",
    "CONSTANTS",
    "FORCE_MAX_N",
    "FRAME_PERIOD_MS",
    "FRAME_RATE_HZ",
    "N_ACTIVE_FRETS",
    "N_MODULES",
    "N_STRINGS",
    "ForceFrame",
    "FretboardGeometry",
    "FretsenseError",
    "ModuleId",
    "RawFrame",
    "all_modules",
    "fret_position",
    "module_from_index",
    "module_index",
    "__version__",
]
