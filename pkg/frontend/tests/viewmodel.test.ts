import { describe, expect, test } from "vitest";
import { PALETTES, tileColor } from "../src/colors.js";
import { MODULES, moduleIndex } from "../src/protocol.js";
import {
  ACK_TIMEOUT_MS,
  BoardState,
  SILENCE_TIMEOUT_MS,
  applyLine,
  initialState,
  onDisconnect,
  stageCommand,
  tick,
} from "../src/viewmodel.js";

function hello(threshold = 8, mode: "raw" | "force" = "force"): string {
  return JSON.stringify({
    type: "hello",
    version: 1,
    mode,
    threshold,
    frets: 12,
    strings: 6,
    frame_period_ms: 50,
  });
}

function frame(
  seq: number,
  tMs: number,
  spots: Record<number, { f: number; over?: boolean }> = {},
): string {
  const forces = new Array(MODULES).fill(0);
  const over = new Array(MODULES).fill(false);
  for (const [idx, spot] of Object.entries(spots)) {
    forces[Number(idx)] = spot.f;
    over[Number(idx)] = spot.over ?? false;
  }
  return JSON.stringify({ type: "frame", mode: "force", seq, t_ms: tMs, forces, over });
}

function heartbeat(threshold: number, recording: boolean): string {
  return JSON.stringify({
    type: "heartbeat",
    mode: "force",
    received: 100,
    published: 100,
    dropped: 0,
    gaps: 0,
    missing: 0,
    recording,
    threshold,
  });
}

function live(t = 0): BoardState {
  return applyLine(initialState(), hello(), t);
}

describe("connection lifecycle", () => {
  test("starts connecting, hello makes it live", () => {
    const s0 = initialState();
    expect(s0.connection).toBe("connecting");
    const s1 = applyLine(s0, hello(6), 100);
    expect(s1.connection).toBe("live");
    expect(s1.threshold).toBe(6);
    expect(s1.mode).toBe("force");
  });

  test("silent server flips to disconnected after the 2 s budget", () => {
    let s = live(1000);
    s = tick(s, 1000 + SILENCE_TIMEOUT_MS - 1);
    expect(s.connection).toBe("live");
    s = tick(s, 1000 + SILENCE_TIMEOUT_MS);
    expect(s.connection).toBe("disconnected");
  });

  test("heartbeats alone keep the connection alive", () => {
    let s = live(0);
    for (let t = 1000; t <= 10000; t += 1000) {
      s = applyLine(s, heartbeat(8, false), t);
      s = tick(s, t + 500);
      expect(s.connection).toBe("live");
    }
  });

  test("a frame after silence recovers to live", () => {
    let s = tick(live(0), SILENCE_TIMEOUT_MS);
    expect(s.connection).toBe("disconnected");
    s = applyLine(s, frame(5, 250), SILENCE_TIMEOUT_MS + 10);
    expect(s.connection).toBe("live");
  });

  test("socket drop resets stream state but keeps counters", () => {
    let s = live(0);
    s = applyLine(s, frame(1, 50), 50);
    s = applyLine(s, "garbage", 60);
    s = onDisconnect(s);
    expect(s.connection).toBe("disconnected");
    expect(s.seq).toBeNull();
    expect(s.frameCount).toBe(1);
    expect(s.errorCount).toBe(1);
    expect(s.pending).toHaveLength(0);
  });
});

describe("frames", () => {
  test("force frame updates forces, flags, seq", () => {
    const idx = moduleIndex(3, 2);
    const s = applyLine(live(), frame(42, 2100, { [idx]: { f: 7.5, over: true } }), 2100);
    expect(s.frameCount).toBe(1);
    expect(s.seq).toBe(42);
    expect(s.forces[idx]).toBe(7.5);
    expect(s.over[idx]).toBe(true);
    expect(s.forces).toHaveLength(MODULES);
    expect(s.over.filter(Boolean)).toHaveLength(1);
  });

  test("a tile is red iff the service flagged it, not when force merely exceeds threshold", () => {
    const idx = moduleIndex(5, 5);
    // Service says 9 N but no flag (its threshold may be higher than ours).
    const s = applyLine(live(), frame(1, 50, { [idx]: { f: 9 } }), 50);
    const color = tileColor(s.forces[idx]!, s.over[idx]!, s.threshold ?? 6, PALETTES.classic!);
    expect(color).not.toBe(PALETTES.classic!.flagged);
    // And 1 N with the flag set is red.
    const s2 = applyLine(s, frame(2, 100, { [idx]: { f: 1, over: true } }), 100);
    const color2 = tileColor(s2.forces[idx]!, s2.over[idx]!, s2.threshold ?? 6, PALETTES.classic!);
    expect(color2).toBe(PALETTES.classic!.flagged);
  });

  test("raw frames count but leave the board at rest", () => {
    const counts = new Array(84).fill(800);
    const line = JSON.stringify({ type: "frame", mode: "raw", seq: 3, t_ms: 150, counts });
    const s = applyLine(live(), line, 150);
    expect(s.mode).toBe("raw");
    expect(s.frameCount).toBe(1);
    expect(s.forces.every((f) => f === 0)).toBe(true);
  });

  test("malformed lines bump errorCount and change nothing else", () => {
    const s0 = applyLine(live(), frame(1, 50), 50);
    const s1 = applyLine(s0, '{"type": "frame", "mode": "force", "seq": 2}', 100);
    expect(s1.errorCount).toBe(1);
    expect({ ...s1, errorCount: 0 }).toEqual({ ...s0, errorCount: 0 });
  });
});

describe("command acknowledgment gating", () => {
  test("threshold updates only after the ack arrives", () => {
    const s0 = live(0);
    const staged = stageCommand(s0, { cmd: "set_threshold", value: 5 }, 10)!;
    expect(staged).not.toBeNull();
    expect(JSON.parse(staged.line)).toEqual({ cmd: "set_threshold", value: 5 });
    expect(staged.state.threshold).toBe(8); // still the hello value
    expect(staged.state.pending).toHaveLength(1);

    const s1 = applyLine(
      staged.state,
      '{"type": "ack", "cmd": "set_threshold", "ok": true, "threshold": 5.0}',
      60,
    );
    expect(s1.threshold).toBe(5);
    expect(s1.pending).toHaveLength(0);
    expect(s1.lastFailure).toBeNull();
  });

  test("a refused command reports failure and leaves state alone", () => {
    const staged = stageCommand(live(0), { cmd: "set_threshold", value: 90 }, 10)!;
    const s = applyLine(
      staged.state,
      '{"type": "ack", "cmd": "set_threshold", "ok": false, "error": "out of range"}',
      50,
    );
    expect(s.threshold).toBe(8);
    expect(s.lastFailure).toContain("out of range");
    expect(s.pending).toHaveLength(0);
  });

  test("no ack within 1 s marks the command failed, state unchanged", () => {
    const staged = stageCommand(live(0), { cmd: "set_threshold", value: 5 }, 100)!;
    let s = tick(staged.state, 100 + ACK_TIMEOUT_MS - 1);
    expect(s.pending).toHaveLength(1);
    expect(s.lastFailure).toBeNull();
    s = tick(s, 100 + ACK_TIMEOUT_MS);
    expect(s.pending).toHaveLength(0);
    expect(s.lastFailure).toContain("set_threshold");
    expect(s.threshold).toBe(8);
  });

  test("recording starts on ack with the session path", () => {
    const staged = stageCommand(live(0), { cmd: "start_recording" }, 10)!;
    expect(staged.state.recording).toBe(false);
    const s = applyLine(
      staged.state,
      '{"type": "ack", "cmd": "start_recording", "ok": true, "path": "rec/session_1.txt"}',
      40,
    );
    expect(s.recording).toBe(true);
    expect(s.recordingPath).toBe("rec/session_1.txt");
    const stopped = stageCommand(s, { cmd: "stop_recording" }, 60)!;
    const s2 = applyLine(
      stopped.state,
      '{"type": "ack", "cmd": "stop_recording", "ok": true, "frames_written": 12}',
      80,
    );
    expect(s2.recording).toBe(false);
  });

  test("stop without start is not sendable", () => {
    expect(stageCommand(live(0), { cmd: "stop_recording" }, 10)).toBeNull();
  });

  test("double start is not sendable", () => {
    let s = live(0);
    s = applyLine(s, '{"type": "ack", "cmd": "start_recording", "ok": true, "path": "x"}', 20);
    expect(stageCommand(s, { cmd: "start_recording" }, 30)).toBeNull();
  });

  test("nothing is sendable while disconnected", () => {
    const s = tick(live(0), SILENCE_TIMEOUT_MS);
    expect(stageCommand(s, { cmd: "set_threshold", value: 5 }, SILENCE_TIMEOUT_MS + 1)).toBeNull();
  });
});

describe("heartbeat as authoritative state", () => {
  test("threshold and recording sync from heartbeats", () => {
    let s = live(0);
    s = applyLine(s, heartbeat(4.5, true), 1000);
    expect(s.threshold).toBe(4.5);
    expect(s.recording).toBe(true);
    expect(s.heartbeat).toEqual({ received: 100, dropped: 0, gaps: 0 });
  });
});

describe("replay end marker", () => {
  test("end flips the replayEnded flag", () => {
    const s = applyLine(live(0), '{"type": "end", "published": 80}', 4000);
    expect(s.replayEnded).toBe(true);
  });
});
