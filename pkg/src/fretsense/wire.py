"""Binary framing of raw sensor frames plus the text recording format.

Frame layout (179 bytes, little-endian; see docs/wire_format.md):

    offset  size  field
    0       2     magic 0xFB 0x72
    2       1     version (1)
    3       2     seq, uint16 (wraps)
    5       4     timestamp, uint32 ms since stream start
    9       168   84 x uint16 counts: fret 1..12, each string1..6 then ref
    177     2     CRC-16/CCITT-FALSE over bytes 0..176

The CRC is poly 0x1021, init 0xFFFF, no reflection, no final xor; that is
exactly `binascii.crc_hqx(data, 0xFFFF)`.
"""

from __future__ import annotations

import binascii
import struct
from datetime import datetime, timezone

import numpy as np

from .model import (
    ADC_MAX,
    N_ACTIVE_FRETS,
    N_STRINGS,
    ForceFrame,
    FretsenseError,
    RawFrame,
)

MAGIC = b"\xfb\x72"
VERSION = 1
N_PAYLOAD_WORDS = N_ACTIVE_FRETS * (N_STRINGS + 1)  # 84
FRAME_SIZE = 2 + 1 + 2 + 4 + 2 * N_PAYLOAD_WORDS + 2  # 179
_HEADER = struct.Struct("<2sBHI")
_CRC = struct.Struct("<H")

RECORDING_FIELDS = 1 + N_ACTIVE_FRETS * N_STRINGS  # timestamp + 72 forces


class EncodingError(FretsenseError):
    """Frame contents cannot be represented on the wire."""


class FrameIntegrityError(FretsenseError):
    """A received frame failed magic/version/CRC validation."""


class RecordingFormatError(FretsenseError):
    """A session recording line does not match the documented format."""


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE of a byte string."""
    return binascii.crc_hqx(data, 0xFFFF)


def encode_frame(frame: RawFrame) -> bytes:
    """Serialize a RawFrame to its 179-byte wire form.

    seq wraps modulo 2**16 and the timestamp modulo 2**32; counts outside
    the 12-bit ADC range are an error rather than silently masked.
    """
    counts = np.asarray(frame.counts)
    if counts.min() < 0 or counts.max() > ADC_MAX:
        raise EncodingError("count outside [0, 4095]")
    body = _HEADER.pack(
        MAGIC, VERSION, frame.seq % 0x10000, frame.timestamp_ms % 0x100000000
    ) + counts.astype("<u2").tobytes()
    return body + _CRC.pack(crc16(body))


def decode_frame(data) -> RawFrame:
    """Decode exactly one wire frame from a 179-byte buffer.

    Raises FrameIntegrityError on any malformed input. Use FrameDecoder for
    stream input: it resynchronizes and keeps partial reads.
    """
    data = bytes(data)
    if len(data) != FRAME_SIZE:
        raise FrameIntegrityError(f"expected {FRAME_SIZE} bytes, got {len(data)}")
    magic, version, seq, timestamp = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FrameIntegrityError("bad magic")
    if version != VERSION:
        raise FrameIntegrityError(f"unsupported version {version}")
    (stored,) = _CRC.unpack_from(data, FRAME_SIZE - 2)
    if crc16(data[: FRAME_SIZE - 2]) != stored:
        raise FrameIntegrityError("CRC mismatch")
    counts = np.frombuffer(data, dtype="<u2", count=N_PAYLOAD_WORDS, offset=9)
    counts = counts.reshape(N_ACTIVE_FRETS, N_STRINGS + 1)
    if counts.max() > ADC_MAX:
        raise FrameIntegrityError("payload count outside 12-bit range")
    return RawFrame(seq=seq, timestamp_ms=timestamp, counts=counts)


class FrameDecoder:
    """Incremental decoder for a byte stream of wire frames.

    feed() returns every complete, valid frame found so far and buffers the
    rest. Garbage is skipped by scanning for the next magic; candidates that
    fail CRC advance the scan by one byte so a valid frame hiding behind a
    corrupted prefix is never lost. Counters expose what was dropped.
    """

    def __init__(self):
        self._buf = bytearray()
        self.frames_decoded = 0
        self.crc_errors = 0
        self.bytes_discarded = 0

    def feed(self, data: bytes) -> list[RawFrame]:
        self._buf.extend(data)
        out: list[RawFrame] = []
        buf = self._buf
        i = 0
        while True:
            j = buf.find(MAGIC, i)
            if j < 0:
                # Keep a trailing 0xFB: it may be a split magic.
                keep = len(buf)
                if len(buf) > i and buf[-1] == MAGIC[0]:
                    keep = len(buf) - 1
                self.bytes_discarded += keep - i
                i = keep
                break
            self.bytes_discarded += j - i
            if len(buf) - j < FRAME_SIZE:
                i = j  # needs more bytes
                break
            try:
                frame = decode_frame(bytes(buf[j : j + FRAME_SIZE]))
            except FrameIntegrityError:
                self.crc_errors += 1
                i = j + 1
                continue
            out.append(frame)
            self.frames_decoded += 1
            i = j + FRAME_SIZE
        del self._buf[:i]
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def write_recording_line(frame: ForceFrame) -> str:
    """One session-recording text line: timestamp then 72 forces, 2 decimals.

    Module order is linear index 0..71; the line is newline-terminated and
    has exactly 73 whitespace-separated fields.
    """
    forces = frame.forces.ravel()
    return f"{frame.timestamp_ms} " + " ".join(f"{v:.2f}" for v in forces) + "\n"


def parse_recording_line(line: str) -> tuple[int, np.ndarray]:
    """Parse a recording line back to (timestamp_ms, 12x6 forces)."""
    fields = line.split()
    if len(fields) != RECORDING_FIELDS:
        raise RecordingFormatError(
            f"expected {RECORDING_FIELDS} fields, got {len(fields)}"
        )
    try:
        timestamp = int(fields[0])
        forces = np.array([float(v) for v in fields[1:]])
    except ValueError as exc:
        raise RecordingFormatError(f"non-numeric field: {exc}") from None
    return timestamp, forces.reshape(N_ACTIVE_FRETS, N_STRINGS)


def recording_filename(when: datetime | None = None) -> str:
    """Session file name, `session_<ISO8601 basic>.txt` in UTC."""
    when = when or datetime.now(timezone.utc)
    return f"session_{when.strftime('%Y%m%dT%H%M%SZ')}.txt"
