"""Live acquisition service walkthrough, all in one process.

Boots the service with a fitted calibration set, streams a scripted
performance into the device port at real-time pace, and plays the role of
a practice-UI client on the subscriber port: watching force frames, moving
the over-force threshold, and recording a session to disk.

Run: python3 demos/05_live_service.py  (takes ~4 s, it is paced at 20 Hz)
"""

import asyncio
import json
from pathlib import Path

from fretsense import calibration as cal
from fretsense.emulator import FretboardEmulator, parse_config, parse_scenario
from fretsense.model import ModuleId, all_modules
from fretsense.service import AcquisitionService, ForcePipeline, ThresholdConfig
from fretsense.wire import encode_frame

out_dir = Path(__file__).resolve().parent.parent / "demo_output"
out_dir.mkdir(exist_ok=True)

QUIET = "noise_sigma 0\ndrift_mode off\ntruth_sigma 0\n"
SCENARIO = "3 2 1500 200 1200 200 9.0\n"  # 9 N press while we watch

TARGET = ModuleId(3, 2)


def fit_calset():
    emulator = FretboardEmulator(parse_config(QUIET))
    rig = cal.CalibrationRig(emulator, seed=0)
    return {m: rig.calibrate(m) for m in all_modules()}


async def feed_device(port: int) -> None:
    """Pretend to be the instrument: 20 Hz frames over TCP."""
    emulator = FretboardEmulator(parse_config(QUIET), parse_scenario(SCENARIO))
    _, writer = await asyncio.open_connection("127.0.0.1", port)
    try:
        for frame in emulator.frames(3500):
            writer.write(encode_frame(frame))
            await writer.drain()
            await asyncio.sleep(0.05)
    finally:
        writer.close()
        await writer.wait_closed()


async def main() -> None:
    print("fitting calibration set...")
    pipeline = ForcePipeline(fit_calset(), ThresholdConfig(6.0))
    service = AcquisitionService(pipeline, recording_dir=out_dir)
    await service.start()
    print(f"service up: device port {service.device_port}, "
          f"client port {service.client_port}")

    reader, writer = await asyncio.open_connection("127.0.0.1", service.client_port)
    writer.write(b"\n")  # blank line resolves the transport sniff immediately
    await writer.drain()

    async def recv():
        return json.loads(await reader.readline())

    hello = await recv()
    print(f"hello: mode={hello['mode']} threshold={hello['threshold']} N")
    print("mode starts raw: the first 20 idle frames become the drift baseline\n")

    feeder = asyncio.create_task(feed_device(service.device_port))

    writer.write(json.dumps({"cmd": "start_recording"}).encode() + b"\n")
    await writer.drain()

    saw_force_mode = False
    was_over = False
    session_path = None
    last_frame = None
    while last_frame is None or last_frame["t_ms"] < 3500:
        msg = await recv()
        if msg["type"] == "ack":
            print(f"ack: {msg}")
            if msg.get("cmd") == "start_recording":
                session_path = Path(msg["path"])
            continue
        if msg["type"] != "frame":
            continue
        last_frame = msg
        if msg["mode"] == "force" and not saw_force_mode:
            saw_force_mode = True
            print(f"t={msg['t_ms']} ms: baseline captured, frames are newtons now")
        if msg["mode"] != "force":
            continue
        force = msg["forces"][TARGET.index]
        over = msg["over"][TARGET.index]
        if over and not was_over:
            print(f"t={msg['t_ms']} ms: {TARGET} crossed the threshold "
                  f"at {force:.2f} N -> tile turns red")
        if was_over and not over:
            print(f"t={msg['t_ms']} ms: {TARGET} back under at {force:.2f} N")
        was_over = over
    await feeder

    writer.write(json.dumps({"cmd": "stop_recording"}).encode() + b"\n")
    await writer.drain()
    while True:
        msg = await recv()
        if msg["type"] == "ack" and msg.get("cmd") == "stop_recording":
            print(f"\nrecording closed: {msg['frames_written']} frames in "
                  f"{msg['path']}")
            break

    writer.close()
    await writer.wait_closed()
    await service.stop()
    print(f"pipeline counters: received={pipeline.received} "
          f"published={pipeline.published} dropped={pipeline.dropped}")
    if session_path is not None:
        print(f"\nreplay it: python3 -m fretsense replay {session_path}")


if __name__ == "__main__":
    asyncio.run(main())
