import numpy as np
import pytest

from fretsense.model import (
    ADC_MAX,
    CONSTANTS,
    N_ACTIVE_FRETS,
    N_MODULES,
    N_STRINGS,
    AddressingError,
    ForceFrame,
    FretboardGeometry,
    ModuleId,
    RawFrame,
    SystemConstants,
    all_modules,
    fret_position,
    module_from_index,
    module_index,
)


def test_system_constants():
    assert CONSTANTS.n_active_frets * CONSTANTS.n_strings == 72
    assert CONSTANTS.adc_max == 4095
    assert CONSTANTS.force_min == 0.0
    assert CONSTANTS.force_max == 25.0
    assert CONSTANTS.frame_rate == 20
    with pytest.raises(ValueError):
        SystemConstants(n_active_frets=11)


def test_module_index_examples():
    assert module_index(1, 1) == 0
    assert module_index(12, 6) == 71
    assert module_index(3, 2) == 13


def test_module_index_bijection():
    # Oracle: enumerate all 72 pairs and check the mapping is a bijection
    # that round-trips exactly.
    seen = set()
    for fret in range(1, N_ACTIVE_FRETS + 1):
        for string in range(1, N_STRINGS + 1):
            idx = module_index(fret, string)
            assert 0 <= idx < N_MODULES
            assert idx not in seen
            seen.add(idx)
            back = module_from_index(idx)
            assert (back.fret, back.string) == (fret, string)
    assert seen == set(range(N_MODULES))
    assert len(all_modules()) == N_MODULES


@pytest.mark.parametrize("fret,string", [(0, 1), (13, 1), (1, 0), (1, 7), (-2, 3)])
def test_module_index_range_errors(fret, string):
    with pytest.raises(AddressingError):
        module_index(fret, string)
    with pytest.raises(AddressingError):
        ModuleId(fret, string)


def test_module_from_index_range():
    with pytest.raises(AddressingError):
        module_from_index(72)
    with pytest.raises(AddressingError):
        module_from_index(-1)


def test_fret_position_known_values():
    assert fret_position(650, 12) == pytest.approx(325.0, rel=1e-12)
    assert fret_position(650, 0) == 0.0
    assert abs(fret_position(650, 1) - 36.48) <= 0.01


def test_fret_position_monotone_and_octave_relation():
    pos = [fret_position(650, k) for k in range(0, 20)]
    assert all(b > a for a, b in zip(pos, pos[1:]))
    # Octave relation: the remaining string length at fret 2k is the square
    # of the fraction remaining at fret k.
    for k in range(1, 10):
        remaining_k = 650 - pos[k]
        remaining_2k = 650 - pos[2 * k]
        assert remaining_2k == pytest.approx(remaining_k**2 / 650, rel=1e-9)


def test_fret_position_input_errors():
    with pytest.raises(ValueError):
        fret_position(0, 1)
    with pytest.raises(ValueError):
        fret_position(650, -1)


def test_geometry_defaults():
    geo = FretboardGeometry()
    assert geo.width(0) == pytest.approx(52.0)
    assert geo.width(12) == pytest.approx(62.0)
    widths = [geo.width(f) for f in range(0, 20)]
    assert all(b > a for a, b in zip(widths, widths[1:]))
    assert geo.position(12) == pytest.approx(geo.scale_length / 2)
    assert len(geo.positions()) == 19


def test_raw_frame_validation():
    counts = np.zeros((12, 7), dtype=int)
    frame = RawFrame(seq=0, timestamp_ms=0, counts=counts)
    assert frame.counts.dtype == np.uint16
    assert not frame.counts.flags.writeable
    assert frame.sense_counts().shape == (12, 6)
    assert frame.ref_counts().shape == (12,)
    with pytest.raises(ValueError):
        RawFrame(seq=0, timestamp_ms=0, counts=np.full((12, 7), ADC_MAX + 1))
    with pytest.raises(ValueError):
        RawFrame(seq=0, timestamp_ms=0, counts=np.zeros((12, 6)))


def test_force_frame_clamps_to_sensing_range():
    forces = np.full((12, 6), 40.0)
    forces[0, 0] = -3.0
    frame = ForceFrame(
        seq=0, timestamp_ms=0, forces=forces, over_threshold=np.zeros((12, 6), bool)
    )
    assert frame.forces.max() == 25.0
    assert frame.forces.min() == 0.0
    assert not frame.forces.flags.writeable
