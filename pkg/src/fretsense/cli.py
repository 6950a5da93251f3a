"""Operator command line: emulate, calibrate, validate, report, serve, replay.

Conventions: machine-readable results go to stdout as `key=value` tokens or
fixed-field lines, logs and progress go to stderr. Exit status 0 is success,
1 an input problem (bad file, bad flag, failed data-quality gate), 2 a
runtime failure (socket, disk, aborted stream).
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import socket
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import calibration as cal
from .emulator import (
    ConfigError,
    EmulatorConfig,
    FretboardEmulator,
    ScenarioError,
    StreamAborted,
    load_config,
    load_scenario,
    run_stream,
)
from .model import (
    AddressingError,
    ForceFrame,
    FretsenseError,
    ModuleId,
    N_ACTIVE_FRETS,
    N_STRINGS,
)
from .service import (
    AcquisitionService,
    DEFAULT_THRESHOLD_N,
    ForcePipeline,
    Published,
    ReplayServer,
    ThresholdConfig,
    ThresholdError,
)
from .wire import FRAME_SIZE, MAGIC, RecordingFormatError, parse_recording_line

log = logging.getLogger("fretsense.cli")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2

# Errors that mean "your inputs are wrong", as opposed to the world failing.
_INPUT_ERRORS = (
    ConfigError,
    ScenarioError,
    AddressingError,
    ThresholdError,
    cal.CalsetFormatError,
    RecordingFormatError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; our contract reserves 2 for
    runtime failures, so usage problems exit 1 like other input errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr, flush=True)


def _load_emulator_inputs(args) -> tuple[EmulatorConfig, list]:
    config = load_config(args.config) if args.config else EmulatorConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    scenario = load_scenario(args.scenario) if getattr(args, "scenario", None) else []
    return config, scenario


def _parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


# -- emulate -------------------------------------------------------------------


def cmd_emulate(args) -> int:
    try:
        config, scenario = _load_emulator_inputs(args)
    except _INPUT_ERRORS as exc:
        _err(str(exc))
        return EXIT_INPUT
    if args.duration < 0:
        _err("--duration must be >= 0")
        return EXIT_INPUT

    emulator = FretboardEmulator(config, scenario)
    realtime = args.realtime if args.realtime is not None else bool(args.connect)
    try:
        if args.connect:
            host, port = _parse_hostport(args.connect)
            with socket.create_connection((host, port)) as sock:
                n = run_stream(emulator, args.duration, sock.sendall, realtime=realtime)
            dest = args.connect
        else:
            with open(args.out, "wb") as fh:
                n = run_stream(emulator, args.duration, fh.write, realtime=realtime)
            dest = args.out
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except StreamAborted as exc:
        _err(f"stream aborted after {exc.frames_sent} frames: {exc.cause}")
        return EXIT_RUNTIME
    except OSError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"frames={n} bytes={n * FRAME_SIZE} out={dest}")
    return EXIT_OK


# -- calibrate -----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    try:
        config, _ = _load_emulator_inputs(args)
        if args.all:
            modules = [ModuleId.from_index(i) for i in range(72)]
        else:
            modules = [ModuleId(args.module[0], args.module[1])]
    except _INPUT_ERRORS as exc:
        _err(str(exc))
        return EXIT_INPUT

    emulator = FretboardEmulator(config)
    try:
        rig = cal.CalibrationRig(emulator, seed=config.seed)
    except cal.UnstableBaselineError as exc:
        _err(f"baseline capture failed: {exc}")
        return EXIT_RUNTIME

    curves, below_gate, failed = [], [], []
    for m in modules:
        try:
            curve = rig.calibrate(m)
        except (cal.DegenerateFitError, cal.InsufficientDataError) as exc:
            failed.append((m, exc))
            print(f"failed {m.fret} {m.string} reason={exc.__class__.__name__}")
            continue
        except cal.SweepAborted as exc:
            _err(str(exc))
            return EXIT_RUNTIME
        if curve.r_squared < cal.R_SQUARED_GATE:
            below_gate.append((m, curve))
            print(f"below_gate {m.fret} {m.string} r_squared={curve.r_squared:.6f}")
            if args.force:
                curves.append(curve)
        else:
            curves.append(curve)
            print(f"ok {m.fret} {m.string} r_squared={curve.r_squared:.6f}")

    try:
        cal.write_calset(curves, args.out)
    except OSError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    rejected = len(below_gate) if not args.force else 0
    print(
        f"modules={len(modules)} written={len(curves)} below_gate={len(below_gate)}"
        f" failed={len(failed)} out={args.out}"
    )
    if failed or rejected:
        _err(f"{len(failed) + rejected} module(s) not calibrated; see stdout listing")
        return EXIT_INPUT
    return EXIT_OK


# -- validate ------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        calset = cal.read_calset(args.calset)
        config, _ = _load_emulator_inputs(args)
    except _INPUT_ERRORS as exc:
        _err(str(exc))
        return EXIT_INPUT
    if args.trials < 1:
        _err("--trials must be >= 1")
        return EXIT_INPUT

    emulator = FretboardEmulator(config)
    try:
        rig = cal.CalibrationRig(emulator, seed=config.seed)
    except cal.UnstableBaselineError as exc:
        _err(f"baseline capture failed: {exc}")
        return EXIT_RUNTIME
    seed = args.seed if args.seed is not None else config.seed
    results = []
    for m in sorted(calset, key=lambda m: m.index):
        # Child seed per module: reproducible and order-independent.
        results.append(rig.validate(m, calset[m], args.trials, seed=[seed, m.index]))
    report = cal.fleet_report(results)

    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cal.write_results(results, out / "validation.txt")
        cal.write_fleet_summary(report, out / "fleet_summary.txt")
        cal.write_histogram_csv(report.rmse_hist, out / "hist_rmse.csv")
        cal.write_histogram_csv(report.worst_hist, out / "hist_worst.csv")
    except OSError as exc:
        _err(str(exc))
        return EXIT_RUNTIME

    low_confidence = args.trials < cal.LOW_CONFIDENCE_TRIALS
    print(
        f"modules={len(results)} trials={args.trials}"
        f" fraction_rmse_under_0p4={report.fraction_rmse_under_0p4:.9g}"
        f" fraction_worst_under_5pct={report.fraction_worst_under_5pct:.9g}"
        f" target_rmse_fraction=0.81 target_worst_fraction=0.90"
        f" low_confidence={str(low_confidence).lower()}"
        f" out={out}"
    )
    if low_confidence:
        _err(f"low confidence: {args.trials} trial(s) per module, want >= "
             f"{cal.LOW_CONFIDENCE_TRIALS}")
    return EXIT_OK


# -- report --------------------------------------------------------------------


def cmd_report(args) -> int:
    try:
        results = cal.read_results(args.results)
    except _INPUT_ERRORS as exc:
        _err(str(exc))
        return EXIT_INPUT
    if not results:
        _err("no validation results in input")
        return EXIT_INPUT

    out = Path(args.out_dir)
    rmse_hist = cal.fixed_histogram([r.rmse for r in results], cal.RMSE_BIN_EDGES)
    worst_hist = cal.fixed_histogram(
        [r.worst_error_pct_fso for r in results], cal.WORST_BIN_EDGES
    )
    try:
        out.mkdir(parents=True, exist_ok=True)
        cal.write_histogram_csv(rmse_hist, out / "hist_rmse.csv")
        cal.write_histogram_csv(worst_hist, out / "hist_worst.csv")
    except OSError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(
        f"modules={len(results)} rmse_csv={out / 'hist_rmse.csv'}"
        f" worst_csv={out / 'hist_worst.csv'}"
    )
    return EXIT_OK


# -- serve ---------------------------------------------------------------------


def _env_default(name: str, fallback, convert):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return fallback
    try:
        return convert(raw)
    except ValueError:
        raise ConfigError(f"environment variable {name}={raw!r} is not valid")


async def _run_service(service: AcquisitionService) -> None:
    await service.start()
    print(
        f"listening device={service.device_port} client={service.client_port}",
        file=sys.stderr,
        flush=True,
    )
    try:
        await service.serve_forever()
    finally:
        await service.stop()


def cmd_serve(args) -> int:
    try:
        device_port = args.device_port if args.device_port is not None else (
            _env_default("FRETSENSE_DEVICE_PORT", 0, int))
        client_port = args.client_port if args.client_port is not None else (
            _env_default("FRETSENSE_CLIENT_PORT", 0, int))
        threshold = args.threshold if args.threshold is not None else (
            _env_default("FRETSENSE_THRESHOLD", DEFAULT_THRESHOLD_N, float))
        recording_dir = args.recording_dir or _env_default(
            "FRETSENSE_RECORDING_DIR", ".", str)
        calset_path = args.calset or os.environ.get("FRETSENSE_CALSET")
        calset = cal.read_calset(calset_path) if calset_path else None
        pipeline = ForcePipeline(calset, ThresholdConfig(threshold))
    except _INPUT_ERRORS as exc:
        _err(str(exc))
        return EXIT_INPUT

    service = AcquisitionService(
        pipeline,
        host=args.host,
        device_port=device_port,
        client_port=client_port,
        recording_dir=recording_dir,
    )
    try:
        asyncio.run(_run_service(service))
    except KeyboardInterrupt:
        log.info("interrupted; shut down cleanly")
        return EXIT_OK
    except OSError as exc:
        _err(f"cannot serve: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


# -- replay --------------------------------------------------------------------


def _load_replay_items(args) -> tuple[list[Published], int]:
    """Read a session recording (.txt) or an encoded frame capture (.bin),
    auto-detected by content. Returns (items, skipped_count)."""
    data = Path(args.file).read_bytes()
    if not data:
        return [], 0

    if data[:2] == MAGIC:
        calset = cal.read_calset(args.calset) if args.calset else None
        pipeline = ForcePipeline(calset, ThresholdConfig(args.threshold))
        items = pipeline.feed(data)
        return items, pipeline.dropped

    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        raise RecordingFormatError(
            "unrecognized file: neither wire capture nor session recording"
        ) from None
    items, skipped = [], 0
    zeros = np.zeros((N_ACTIVE_FRETS, N_STRINGS), dtype=bool)
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            ts, forces = parse_recording_line(line)
        except RecordingFormatError:
            skipped += 1
            continue
        # Flags are re-evaluated by the replay server at publish time.
        frame = ForceFrame(
            seq=len(items), timestamp_ms=ts, forces=forces, over_threshold=zeros
        )
        items.append(Published("force", frame.seq, ts, frame=frame))
    if not items and skipped:
        raise RecordingFormatError("no parseable lines in recording")
    return items, skipped


async def _run_replay(server: ReplayServer) -> int:
    await server.start()
    print(f"listening client={server.client_port}", file=sys.stderr, flush=True)
    return await server.run()


def cmd_replay(args) -> int:
    if args.speed <= 0:
        _err("--speed must be > 0")
        return EXIT_INPUT
    try:
        items, skipped = _load_replay_items(args)
        thresholds = ThresholdConfig(args.threshold)
    except _INPUT_ERRORS as exc:
        _err(str(exc))
        return EXIT_INPUT

    if not items:
        _err("warning: empty input, nothing to replay")
        print(f"frames=0 skipped={skipped}")
        return EXIT_OK

    server = ReplayServer(
        items,
        host=args.host,
        client_port=args.client_port or 0,
        speed=args.speed,
        thresholds=thresholds,
        wait_for_subscriber=not args.no_wait,
    )
    try:
        n = asyncio.run(_run_replay(server))
    except KeyboardInterrupt:
        return EXIT_OK
    except OSError as exc:
        _err(f"cannot serve replay: {exc}")
        return EXIT_RUNTIME
    print(f"frames={n} skipped={skipped}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fretsense",
        description="Force-sensing fretboard toolkit: emulation, calibration, "
        "validation, live acquisition, replay.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("emulate", help="stream encoded frames to a file or socket")
    p.add_argument("--config", help="emulator config file")
    p.add_argument("--scenario", help="scripted press scenario file")
    p.add_argument("--duration", type=int, default=1000, metavar="MS",
                   help="scenario time span in ms (default 1000)")
    p.add_argument("--seed", type=int, help="override the config RNG seed")
    dest = p.add_mutually_exclusive_group(required=True)
    dest.add_argument("--out", help="write frames to this file")
    dest.add_argument("--connect", metavar="HOST:PORT",
                      help="stream frames to a device port")
    p.add_argument("--realtime", action=argparse.BooleanOptionalAction, default=None,
                   help="pace frames at 20 Hz (default: on for --connect)")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("calibrate", help="sweep modules against the emulated rig "
                                         "and fit counts->newtons curves")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--all", action="store_true", help="calibrate all 72 modules")
    which.add_argument("--module", nargs=2, type=int, metavar=("FRET", "STRING"))
    p.add_argument("--out", required=True, help="calibration set output file")
    p.add_argument("--config", help="emulator config file")
    p.add_argument("--seed", type=int, help="override the config RNG seed")
    p.add_argument("--force", action="store_true",
                   help="write curves that fail the R^2 gate anyway")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("validate", help="score a calibration set on random presses")
    p.add_argument("calset", help="calibration set file")
    p.add_argument("--trials", type=int, default=50, help="presses per module")
    p.add_argument("--out-dir", default=".", help="where result files go")
    p.add_argument("--config", help="emulator config file")
    p.add_argument("--seed", type=int, help="validation RNG seed")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="histogram CSVs from validation results")
    p.add_argument("results", help="validation results file")
    p.add_argument("--out-dir", default=".", help="where CSVs go")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the live acquisition service")
    p.add_argument("--device-port", type=int, default=None,
                   help="binary frame ingest port (env FRETSENSE_DEVICE_PORT, 0=auto)")
    p.add_argument("--client-port", type=int, default=None,
                   help="subscriber port (env FRETSENSE_CLIENT_PORT, 0=auto)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--calset", default=None,
                   help="calibration set (env FRETSENSE_CALSET); omit for raw mode")
    p.add_argument("--recording-dir", default=None,
                   help="session file directory (env FRETSENSE_RECORDING_DIR)")
    p.add_argument("--threshold", type=float, default=None,
                   help="over-force threshold in N (env FRETSENSE_THRESHOLD)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="re-publish a recording or frame capture")
    p.add_argument("file", help="session .txt or wire-capture .bin")
    p.add_argument("--speed", type=float, default=1.0,
                   help="pacing multiplier (2 = twice as fast)")
    p.add_argument("--client-port", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--calset", help="calibration set for wire captures")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_N)
    p.add_argument("--no-wait", action="store_true",
                   help="publish immediately instead of waiting for a subscriber")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,  # rebind to the current stderr on every invocation
    )
    try:
        return args.func(args)
    except FretsenseError as exc:  # anything a subcommand didn't map itself
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
