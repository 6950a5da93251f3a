"""Live acquisition: decode the device byte stream, compensate, calibrate,
threshold, fan out to subscribed clients, and record sessions.

The sync core (`ForcePipeline`) is plain-Python and independently testable;
`AcquisitionService` wraps it in three asyncio stages (ingest -> transform ->
fan-out) connected by bounded queues, so no stage can block another beyond
queue backpressure. All state lives on one event loop; the subscriber registry
and the recorder each have a single owning stage.

Clients speak newline-delimited JSON over TCP. A client whose first bytes are
an HTTP GET is upgraded to a WebSocket (RFC 6455) carrying the same messages,
one JSON document per text frame, so browsers can subscribe to the same port.
See docs/client_protocol.md for the schema and a golden transcript.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .calibration import (
    BaselineReference,
    CalibrationCurve,
    UnstableBaselineError,
    capture_baseline,
    read_calset,
    temp_compensate,
)
from .model import (
    FORCE_MAX_N,
    FretsenseError,
    ForceFrame,
    ModuleId,
    N_ACTIVE_FRETS,
    N_MODULES,
    N_STRINGS,
    RawFrame,
    FRAME_PERIOD_MS,
)
from .wire import FrameDecoder, recording_filename, write_recording_line

log = logging.getLogger("fretsense.service")

PROTOCOL_VERSION = 1
DEFAULT_THRESHOLD_N = 8.0
SUBSCRIBER_QUEUE_DEPTH = 64
HEARTBEAT_INTERVAL_S = 1.0
RECORD_FLUSH_INTERVAL_S = 1.0
# How long to wait for a client's first byte before assuming plain TCP.
TRANSPORT_SNIFF_TIMEOUT_S = 0.3


class ThresholdError(FretsenseError):
    """A requested threshold is outside the sensing range."""


class RecordingError(FretsenseError):
    """Recording could not be started or stopped as requested."""


class CalsetIncompleteError(FretsenseError):
    """A calibration set loaded for live serving does not cover all modules."""


def _check_threshold(value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or not (0.0 < value <= FORCE_MAX_N):
        raise ThresholdError(f"threshold {value} outside (0, {FORCE_MAX_N}]")
    return value


@dataclass
class ThresholdConfig:
    """Global over-threshold limit plus optional per-module overrides.

    Semantics are strict: a module is flagged when force > its threshold.
    """

    global_threshold: float = DEFAULT_THRESHOLD_N
    overrides: dict[ModuleId, float] = field(default_factory=dict)

    def __post_init__(self):
        self.global_threshold = _check_threshold(self.global_threshold)
        for m, v in self.overrides.items():
            self.overrides[m] = _check_threshold(v)

    def for_module(self, module: ModuleId) -> float:
        return self.overrides.get(module, self.global_threshold)

    def set(self, value: float, module: Optional[ModuleId] = None) -> float:
        value = _check_threshold(value)
        if module is None:
            self.global_threshold = value
        else:
            self.overrides[module] = value
        return value

    def grid(self) -> np.ndarray:
        g = np.full((N_ACTIVE_FRETS, N_STRINGS), self.global_threshold)
        for m, v in self.overrides.items():
            g[m.fret - 1, m.string - 1] = v
        return g


@dataclass
class Published:
    """One pipeline output: always the frame identity, forces when calibrated.

    mode "force": `frame` is set. mode "raw": no calibration (or baseline
    still warming up) and `raw` carries the diagnostic counts.
    """

    mode: str  # "force" | "raw"
    seq: int
    timestamp_ms: int
    raw: Optional[RawFrame] = None
    frame: Optional[ForceFrame] = None


class ForcePipeline:
    """Sync transform core: bytes -> RawFrames -> Published force frames.

    Owns the wire decoder (sole holder of stream state), the baseline
    warm-up buffer, the calibration set, and the drop/gap accounting.
    Counters satisfy received == published + dropped at all times; seq gaps
    are counted separately because those frames never arrived.
    """

    def __init__(
        self,
        calset: Optional[dict[ModuleId, CalibrationCurve]] = None,
        thresholds: Optional[ThresholdConfig] = None,
        baseline: Optional[BaselineReference] = None,
        warmup_frames: int = 20,
    ):
        self.thresholds = thresholds if thresholds is not None else ThresholdConfig()
        self.baseline = baseline
        self.warmup_frames = warmup_frames
        self._warmup: deque[RawFrame] = deque(maxlen=warmup_frames)
        self._slopes: Optional[np.ndarray] = None
        self._intercepts: Optional[np.ndarray] = None
        self.calset: Optional[dict[ModuleId, CalibrationCurve]] = None
        if calset is not None:
            self.load_calset(calset)

        self._decoder = FrameDecoder()
        self._crc_seen = 0
        self._last_seq: Optional[int] = None
        self.received = 0
        self.published = 0
        self.dropped = 0
        self.gap_events = 0
        self.missing_frames = 0

    # -- configuration ------------------------------------------------------

    def load_calset(self, calset: dict[ModuleId, CalibrationCurve]) -> None:
        """Install a complete calibration set; partial sets are refused
        because live frames always carry all 72 modules."""
        missing = N_MODULES - len(calset)
        if missing:
            raise CalsetIncompleteError(f"calibration set missing {missing} modules")
        slopes = np.empty((N_ACTIVE_FRETS, N_STRINGS))
        intercepts = np.empty((N_ACTIVE_FRETS, N_STRINGS))
        for m, curve in calset.items():
            slopes[m.fret - 1, m.string - 1] = curve.slope
            intercepts[m.fret - 1, m.string - 1] = curve.intercept
        self.calset = dict(calset)
        self._slopes = slopes
        self._intercepts = intercepts

    @property
    def mode(self) -> str:
        return "force" if (self.calset is not None and self.baseline is not None) else "raw"

    # -- stream state -------------------------------------------------------

    def reset_stream(self) -> None:
        """Forget partial bytes and seq continuity (device reconnected);
        counters are cumulative and survive."""
        self._decoder = FrameDecoder()
        self._crc_seen = 0
        self._last_seq = None

    def decode_bytes(self, data: bytes) -> list[RawFrame]:
        frames = self._decoder.feed(data)
        bad = self._decoder.crc_errors - self._crc_seen
        self._crc_seen = self._decoder.crc_errors
        self.received += len(frames) + bad
        self.dropped += bad
        return frames

    def process_frame(self, raw: RawFrame) -> Published:
        """Transform one decoded frame. Never raises on data content."""
        if self._last_seq is not None:
            expected = (self._last_seq + 1) & 0xFFFF
            if raw.seq != expected:
                self.gap_events += 1
                self.missing_frames += (raw.seq - expected) & 0xFFFF
        self._last_seq = raw.seq
        self.published += 1

        if self.calset is None:
            return Published("raw", raw.seq, raw.timestamp_ms, raw=raw)
        if self.baseline is None:
            self._warmup.append(raw)
            if len(self._warmup) == self.warmup_frames:
                try:
                    self.baseline = capture_baseline(
                        list(self._warmup), n_frames=self.warmup_frames
                    )
                    self._warmup.clear()
                    log.info("baseline captured: %s", list(self.baseline.per_fret))
                except UnstableBaselineError:
                    pass  # slide the window and retry on the next frame
            if self.baseline is None:
                return Published("raw", raw.seq, raw.timestamp_ms, raw=raw)

        counts, _ = temp_compensate(raw, self.baseline)
        forces = np.clip(self._slopes * counts + self._intercepts, 0.0, FORCE_MAX_N)
        flags = forces > self.thresholds.grid()
        frame = ForceFrame(
            seq=raw.seq, timestamp_ms=raw.timestamp_ms, forces=forces, over_threshold=flags
        )
        return Published("force", raw.seq, raw.timestamp_ms, raw=raw, frame=frame)

    def feed(self, data: bytes) -> list[Published]:
        """Convenience for batch/offline use: decode + transform in one call."""
        return [self.process_frame(f) for f in self.decode_bytes(data)]


# -- session recording --------------------------------------------------------


@dataclass
class SessionState:
    """Summary of one recording session."""

    path: Path
    recording: bool
    frames_written: int = 0
    dropped_frames: int = 0
    truncated: bool = False


class Recorder:
    """Single-writer text recorder. Lines are written whole (never split)
    and flushed at least once per second; a disk failure truncates the
    session but never disturbs the live stream."""

    def __init__(self, directory) -> None:
        self.directory = Path(directory)
        self._fh = None
        self._state: Optional[SessionState] = None
        self._last_flush = 0.0

    @property
    def recording(self) -> bool:
        return self._fh is not None

    @property
    def state(self) -> Optional[SessionState]:
        return self._state

    def start(self) -> Path:
        if self.recording:
            raise RecordingError("already recording")
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / recording_filename()
        n = 1
        while path.exists():  # stop/start within one second
            n += 1
            path = self.directory / f"{path.stem.split('-')[0]}-{n}{path.suffix}"
        try:
            self._fh = open(path, "w", encoding="ascii")
        except OSError as exc:
            raise RecordingError(f"cannot open {path}: {exc}") from exc
        self._state = SessionState(path=path, recording=True)
        self._last_flush = time.monotonic()
        return path

    def write(self, frame: ForceFrame) -> None:
        if not self.recording:
            return
        try:
            self._fh.write(write_recording_line(frame))  # newline-terminated
            now = time.monotonic()
            if now - self._last_flush >= RECORD_FLUSH_INTERVAL_S:
                self._fh.flush()
                self._last_flush = now
        except OSError as exc:
            log.error("recording write failed, session truncated: %s", exc)
            self._abort()
            return
        self._state.frames_written += 1

    def _abort(self) -> None:
        try:
            self._fh.close()
        except OSError:
            pass
        self._fh = None
        self._state.recording = False
        self._state.truncated = True

    def stop(self, dropped_frames: int = 0) -> SessionState:
        if self._state is None:
            raise RecordingError("not recording")
        state = self._state
        state.dropped_frames = dropped_frames
        if self._fh is not None:
            try:
                self._fh.flush()
                self._fh.close()
            except OSError:
                state.truncated = True
            self._fh = None
            state.recording = False
        self._state = None
        return state


# -- client protocol ----------------------------------------------------------


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def frame_message(pub: Published) -> dict:
    """Serialize one Published item to the outbound frame schema.

    Force mode carries 72 forces (newtons, 3 decimals) and 72 booleans in
    module-index order; raw diagnostic mode carries the 84 ADC counts in
    wire order (fret-major, strings 1..6 then the reference channel).
    """
    msg = {"type": "frame", "mode": pub.mode, "seq": pub.seq, "t_ms": pub.timestamp_ms}
    if pub.mode == "force":
        msg["forces"] = [round(float(v), 3) for v in pub.frame.forces.ravel()]
        msg["over"] = [bool(v) for v in pub.frame.over_threshold.ravel()]
    else:
        msg["counts"] = [int(v) for v in pub.raw.counts.ravel()]
    return msg


def hello_message(mode: str, thresholds: ThresholdConfig) -> dict:
    return {
        "type": "hello",
        "version": PROTOCOL_VERSION,
        "mode": mode,
        "threshold": thresholds.global_threshold,
        "frets": N_ACTIVE_FRETS,
        "strings": N_STRINGS,
        "frame_period_ms": FRAME_PERIOD_MS,
    }


# -- WebSocket (server side, RFC 6455) ----------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def ws_encode_text(text: str) -> bytes:
    return _ws_encode(0x1, text.encode("utf-8"))


def _ws_encode(opcode: int, payload: bytes) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + n.to_bytes(2, "big")
    else:
        head += bytes([127]) + n.to_bytes(8, "big")
    return head + payload


async def _ws_read_frame(reader: asyncio.StreamReader) -> tuple[int, bool, bytes]:
    """Read one frame -> (opcode, fin, unmasked payload)."""
    b0, b1 = await reader.readexactly(2)
    fin = bool(b0 & 0x80)
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    n = b1 & 0x7F
    if n == 126:
        n = int.from_bytes(await reader.readexactly(2), "big")
    elif n == 127:
        n = int.from_bytes(await reader.readexactly(8), "big")
    mask = await reader.readexactly(4) if masked else b""
    payload = await reader.readexactly(n) if n else b""
    if masked and n:
        payload = bytes(c ^ mask[i % 4] for i, c in enumerate(payload))
    return opcode, fin, payload


async def _ws_read_message(reader, writer) -> Optional[str]:
    """Next text/binary message, transparently answering pings.
    Returns None when the peer closes."""
    buf = b""
    msg_opcode = None
    while True:
        opcode, fin, payload = await _ws_read_frame(reader)
        if opcode == 0x8:  # close
            try:
                writer.write(_ws_encode(0x8, payload[:2]))
                await writer.drain()
            except OSError:
                pass
            return None
        if opcode == 0x9:  # ping
            writer.write(_ws_encode(0xA, payload))
            await writer.drain()
            continue
        if opcode == 0xA:  # pong
            continue
        if opcode in (0x1, 0x2):
            msg_opcode = opcode
            buf = payload
        elif opcode == 0x0 and msg_opcode is not None:
            buf += payload
        else:
            continue
        if fin:
            return buf.decode("utf-8", errors="replace")


async def _ws_handshake(reader, writer, already_read: bytes) -> bool:
    """Complete the HTTP upgrade. `already_read` holds the sniffed bytes
    (starts with GET). Returns False when the request is not an upgrade."""
    try:
        rest = await asyncio.wait_for(reader.readuntil(b"\r\n\r\n"), timeout=5.0)
    except (asyncio.IncompleteReadError, asyncio.LimitOverrunError, asyncio.TimeoutError):
        return False
    headers = {}
    for line in (already_read + rest).decode("latin-1").split("\r\n")[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get("sec-websocket-key")
    if "websocket" not in headers.get("upgrade", "").lower() or not key:
        writer.write(
            b"HTTP/1.1 426 Upgrade Required\r\n"
            b"Connection: close\r\n\r\n"
            b"this port speaks the fretsense client protocol\n"
        )
        await writer.drain()
        return False
    writer.write(
        b"HTTP/1.1 101 Switching Protocols\r\n"
        b"Upgrade: websocket\r\n"
        b"Connection: Upgrade\r\n"
        b"Sec-WebSocket-Accept: " + ws_accept_key(key).encode("ascii") + b"\r\n\r\n"
    )
    await writer.drain()
    return True


# -- client hub ----------------------------------------------------------------


class _Client:
    __slots__ = ("reader", "writer", "queue", "decided", "ws", "dead", "tasks", "peer")

    def __init__(self, reader, writer, depth: int):
        self.reader = reader
        self.writer = writer
        self.queue: asyncio.Queue = asyncio.Queue(depth)
        self.decided = asyncio.Event()  # transport known (ndjson vs websocket)
        self.ws = False
        self.dead = False
        self.tasks: list[asyncio.Task] = []
        peer = writer.get_extra_info("peername")
        self.peer = f"{peer[0]}:{peer[1]}" if peer else "?"


class ClientHub:
    """Owns the client listener and the per-subscriber bounded queues.

    broadcast() never blocks: a subscriber whose queue is full is dropped on
    the spot, which is the contract that keeps one stalled client from
    stalling the pipeline or its peers.
    """

    def __init__(
        self,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        queue_depth: int = SUBSCRIBER_QUEUE_DEPTH,
        hello: Callable[[], dict],
        on_command: Callable[[dict], "asyncio.Future | object"],
    ):
        self._host = host
        self._want_port = port
        self.port: Optional[int] = None
        self._depth = queue_depth
        self._hello = hello
        self._on_command = on_command
        self._server: Optional[asyncio.AbstractServer] = None
        self._clients: set[_Client] = set()
        self.first_subscriber = asyncio.Event()
        self.clients_dropped = 0

    @property
    def n_clients(self) -> int:
        return len(self._clients)

    async def start(self) -> int:
        self._server = await asyncio.start_server(
            self._handle_client, self._host, self._want_port
        )
        self.port = self._server.sockets[0].getsockname()[1]
        return self.port

    async def close(self) -> None:
        # Stop accepting, then cancel handlers; wait_closed() last because on
        # newer Pythons it blocks until connection handlers have finished.
        if self._server is not None:
            self._server.close()
        for client in list(self._clients):
            await self._close_client(client, "shutdown")
        if self._server is not None:
            await self._server.wait_closed()

    def broadcast(self, line: str) -> None:
        for client in list(self._clients):
            self._offer(client, line)

    async def drain(self, timeout: float = 5.0) -> None:
        """Wait until every live client's queue has been written out (or the
        timeout passes). Used before orderly teardown so queued messages are
        not lost with the connections."""
        deadline = asyncio.get_running_loop().time() + timeout
        while asyncio.get_running_loop().time() < deadline:
            if all(c.queue.empty() for c in self._clients):
                await asyncio.sleep(0.05)  # let in-flight writes finish
                return
            await asyncio.sleep(0.02)

    def _offer(self, client: _Client, line: str) -> None:
        if client.dead:
            return
        try:
            client.queue.put_nowait(line)
        except asyncio.QueueFull:
            client.dead = True
            self.clients_dropped += 1
            log.warning("dropping slow client %s (queue full)", client.peer)
            asyncio.get_running_loop().create_task(
                self._close_client(client, "slow consumer")
            )

    async def _close_client(self, client: _Client, why: str) -> None:
        client.dead = True
        self._clients.discard(client)
        for t in client.tasks:
            if t is not asyncio.current_task():
                t.cancel()
        try:
            client.writer.close()
            await client.writer.wait_closed()
        except (OSError, asyncio.CancelledError):
            pass
        log.info("client %s closed (%s)", client.peer, why)

    async def _handle_client(self, reader, writer) -> None:
        client = _Client(reader, writer, self._depth)
        self._clients.add(client)
        self._offer(client, dumps_line(self._hello()))
        self.first_subscriber.set()
        log.info("client %s connected", client.peer)
        client.tasks = [
            asyncio.current_task(),
            asyncio.get_running_loop().create_task(self._client_writer(client)),
        ]
        try:
            await self._client_reader(client)
        except (asyncio.IncompleteReadError, ConnectionError, ValueError,
                asyncio.CancelledError):
            pass
        finally:
            if not client.dead:
                await self._close_client(client, "disconnected")

    async def _client_writer(self, client: _Client) -> None:
        try:
            await client.decided.wait()
            while not client.dead:
                line = await client.queue.get()
                if client.ws:
                    client.writer.write(ws_encode_text(line))
                else:
                    client.writer.write(line.encode("utf-8") + b"\n")
                await client.writer.drain()
        except (ConnectionError, OSError, asyncio.CancelledError):
            pass

    async def _client_reader(self, client: _Client) -> None:
        # Transport sniff: WebSocket clients always open with an HTTP GET;
        # plain subscribers may never send at all, hence the timeout.
        head = b""
        try:
            head = await asyncio.wait_for(
                client.reader.read(1), timeout=TRANSPORT_SNIFF_TIMEOUT_S
            )
        except asyncio.TimeoutError:
            pass
        if head == b"G":
            head += await client.reader.readexactly(3)
        if head == b"GET ":
            if not await _ws_handshake(client.reader, client.writer, head):
                await self._close_client(client, "http non-upgrade")
                return
            client.ws = True
            client.decided.set()
            while not client.dead:
                text = await _ws_read_message(client.reader, client.writer)
                if text is None:
                    break
                for piece in text.splitlines():
                    if piece.strip():
                        await self._dispatch(client, piece)
            return
        # Plain NDJSON TCP. `head` may hold the first byte(s) of a command.
        client.decided.set()
        buf = head
        while not client.dead:
            chunk = await client.reader.readline()
            if not chunk:  # EOF; a silent pure subscriber parks here until close
                break
            line = (buf + chunk).decode("utf-8", errors="replace").strip()
            buf = b""
            if line:
                await self._dispatch(client, line)

    async def _dispatch(self, client: _Client, line: str) -> None:
        try:
            cmd = json.loads(line)
        except json.JSONDecodeError:
            self._offer(client, dumps_line({"type": "ack", "ok": False, "error": "invalid json"}))
            return
        if not isinstance(cmd, dict):
            self._offer(client, dumps_line({"type": "ack", "ok": False, "error": "command must be an object"}))
            return
        ack = self._on_command(cmd)
        if asyncio.iscoroutine(ack):
            ack = await ack
        self._offer(client, dumps_line(ack))


# -- acquisition service --------------------------------------------------------


class AcquisitionService:
    """Device-port byte stream in, client-port force frames out.

    Stage layout (each an asyncio task, queues bounded):

        device reader --RawFrame--> transform --Published--> fan-out
                                                         \\-> recorder

    A single device connection is honored at a time; a replacement
    connection resets wire-stream state but keeps cumulative counters.
    """

    def __init__(
        self,
        pipeline: ForcePipeline,
        *,
        host: str = "127.0.0.1",
        device_port: int = 0,
        client_port: int = 0,
        recording_dir=".",
        heartbeat_interval: float = HEARTBEAT_INTERVAL_S,
        queue_depth: int = SUBSCRIBER_QUEUE_DEPTH,
    ):
        self.pipeline = pipeline
        self.recorder = Recorder(recording_dir)
        self._host = host
        self._want_device_port = device_port
        self.device_port: Optional[int] = None
        self.hub = ClientHub(
            host=host,
            port=client_port,
            queue_depth=queue_depth,
            hello=lambda: hello_message(self.pipeline.mode, self.pipeline.thresholds),
            on_command=self.handle_command,
        )
        self._heartbeat_interval = heartbeat_interval
        self._decode_q: asyncio.Queue = asyncio.Queue(256)
        self._publish_q: asyncio.Queue = asyncio.Queue(256)
        self._tasks: list[asyncio.Task] = []
        self._device_server: Optional[asyncio.AbstractServer] = None
        self._device_busy = False
        self._device_writers: set = set()
        self._drop_snapshot = 0

    @property
    def client_port(self) -> Optional[int]:
        return self.hub.port

    async def start(self) -> None:
        self._device_server = await asyncio.start_server(
            self._handle_device, self._host, self._want_device_port
        )
        self.device_port = self._device_server.sockets[0].getsockname()[1]
        await self.hub.start()
        loop = asyncio.get_running_loop()
        self._tasks = [
            loop.create_task(self._transform_stage()),
            loop.create_task(self._fanout_stage()),
            loop.create_task(self._heartbeat_stage()),
        ]
        log.info(
            "acquisition service up: device=%s client=%s mode=%s",
            self.device_port, self.client_port, self.pipeline.mode,
        )

    async def stop(self) -> None:
        for t in self._tasks:
            t.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        self._tasks = []
        if self._device_server is not None:
            self._device_server.close()
        for w in list(self._device_writers):
            w.close()
        if self._device_server is not None:
            await self._device_server.wait_closed()
        await self.hub.close()
        if self.recorder.recording:
            state = self.recorder.stop(self._dropped_since_start())
            log.info("recording flushed on shutdown: %s (%d frames)",
                     state.path, state.frames_written)

    async def serve_forever(self) -> None:
        await asyncio.gather(*self._tasks)

    # -- stages ---------------------------------------------------------------

    async def _handle_device(self, reader, writer) -> None:
        peer = writer.get_extra_info("peername")
        if self._device_busy:
            log.warning("rejecting second device connection from %s", peer)
            writer.close()
            return
        self._device_busy = True
        self._device_writers.add(writer)
        log.info("device connected: %s", peer)
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                for raw in self.pipeline.decode_bytes(data):
                    await self._decode_q.put(raw)
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self._device_busy = False
            self._device_writers.discard(writer)
            self.pipeline.reset_stream()
            writer.close()
            log.info("device disconnected")

    async def _transform_stage(self) -> None:
        while True:
            raw = await self._decode_q.get()
            await self._publish_q.put(self.pipeline.process_frame(raw))

    async def _fanout_stage(self) -> None:
        while True:
            pub = await self._publish_q.get()
            self.hub.broadcast(dumps_line(frame_message(pub)))
            if self.recorder.recording and pub.frame is not None:
                self.recorder.write(pub.frame)
            # Queue.get returns without yielding while frames are backed up;
            # yield explicitly so subscriber writers drain between frames and
            # a burst cannot overflow the queue of a client that is keeping up.
            await asyncio.sleep(0)

    async def _heartbeat_stage(self) -> None:
        while True:
            await asyncio.sleep(self._heartbeat_interval)
            self.hub.broadcast(dumps_line(self.heartbeat()))

    def heartbeat(self) -> dict:
        p = self.pipeline
        return {
            "type": "heartbeat",
            "mode": p.mode,
            "received": p.received,
            "published": p.published,
            "dropped": p.dropped,
            "gaps": p.gap_events,
            "missing": p.missing_frames,
            "recording": self.recorder.recording,
            "threshold": p.thresholds.global_threshold,
        }

    # -- commands ---------------------------------------------------------------

    def _dropped_since_start(self) -> int:
        return (self.pipeline.dropped + self.pipeline.missing_frames) - self._drop_snapshot

    def handle_command(self, cmd: dict) -> dict:
        name = cmd.get("cmd")
        try:
            if name == "set_threshold":
                module = None
                if "fret" in cmd or "string" in cmd:
                    module = ModuleId(int(cmd.get("fret", 0)), int(cmd.get("string", 0)))
                value = self.pipeline.thresholds.set(float(cmd["value"]), module)
                ack = {"type": "ack", "cmd": name, "ok": True, "threshold": value}
                if module is not None:
                    ack["fret"], ack["string"] = module.fret, module.string
                return ack
            if name == "start_recording":
                path = self.recorder.start()
                self._drop_snapshot = self.pipeline.dropped + self.pipeline.missing_frames
                return {"type": "ack", "cmd": name, "ok": True, "path": str(path)}
            if name == "stop_recording":
                state = self.recorder.stop(self._dropped_since_start())
                return {
                    "type": "ack", "cmd": name, "ok": True,
                    "path": str(state.path),
                    "frames_written": state.frames_written,
                    "dropped_frames": state.dropped_frames,
                    "truncated": state.truncated,
                }
            if name == "load_calibration":
                calset = read_calset(cmd["path"])
                self.pipeline.load_calset(calset)
                return {"type": "ack", "cmd": name, "ok": True,
                        "modules": len(calset), "mode": self.pipeline.mode}
            return {"type": "ack", "cmd": name, "ok": False, "error": "unknown command"}
        except (FretsenseError, OSError, KeyError, TypeError, ValueError) as exc:
            reason = str(exc) or exc.__class__.__name__
            return {"type": "ack", "cmd": name, "ok": False, "error": reason}


# -- replay ----------------------------------------------------------------------


class ReplayServer:
    """Re-publish a finished session over the client protocol.

    Holds (timestamp, frame-or-raw) items, waits for the first subscriber,
    then paces messages by the recorded timestamp deltas divided by `speed`.
    Force frames get their over-threshold flags re-evaluated at publish time
    so a UI can move the threshold while reviewing.
    """

    def __init__(
        self,
        items: Iterable[Published],
        *,
        host: str = "127.0.0.1",
        client_port: int = 0,
        speed: float = 1.0,
        thresholds: Optional[ThresholdConfig] = None,
        queue_depth: int = SUBSCRIBER_QUEUE_DEPTH,
        wait_for_subscriber: bool = True,
    ):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.items = list(items)
        self.speed = speed
        self.thresholds = thresholds if thresholds is not None else ThresholdConfig()
        self.wait_for_subscriber = wait_for_subscriber
        mode = "force" if any(p.mode == "force" for p in self.items) else "raw"
        self.hub = ClientHub(
            host=host,
            port=client_port,
            queue_depth=queue_depth,
            hello=lambda: hello_message(mode, self.thresholds),
            on_command=self._command,
        )

    @property
    def client_port(self) -> Optional[int]:
        return self.hub.port

    def _command(self, cmd: dict) -> dict:
        name = cmd.get("cmd")
        if name == "set_threshold":
            try:
                value = self.thresholds.set(float(cmd["value"]))
                return {"type": "ack", "cmd": name, "ok": True, "threshold": value}
            except (FretsenseError, KeyError, TypeError, ValueError) as exc:
                return {"type": "ack", "cmd": name, "ok": False, "error": str(exc)}
        return {"type": "ack", "cmd": name, "ok": False,
                "error": "not available during replay"}

    def _republish(self, pub: Published) -> Published:
        if pub.frame is None:
            return pub
        frame = ForceFrame(
            seq=pub.seq,
            timestamp_ms=pub.timestamp_ms,
            forces=pub.frame.forces,
            over_threshold=pub.frame.forces > self.thresholds.grid(),
        )
        return Published("force", pub.seq, pub.timestamp_ms, raw=pub.raw, frame=frame)

    async def start(self) -> int:
        return await self.hub.start()

    async def run(self) -> int:
        if self.hub.port is None:
            await self.start()
        try:
            if self.wait_for_subscriber:
                await self.hub.first_subscriber.wait()
            prev_ts = None
            for pub in self.items:
                if prev_ts is not None and pub.timestamp_ms > prev_ts:
                    await asyncio.sleep((pub.timestamp_ms - prev_ts) / 1000.0 / self.speed)
                prev_ts = pub.timestamp_ms
                self.hub.broadcast(dumps_line(frame_message(self._republish(pub))))
            self.hub.broadcast(dumps_line({"type": "end", "published": len(self.items)}))
            await self.hub.drain()
            return len(self.items)
        finally:
            await self.hub.close()
