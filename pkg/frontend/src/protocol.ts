/**
 * Acquisition-service client protocol: one JSON object per line/WS frame.
 * See docs/client_protocol.md in the repository root. This module is the
 * only place that knows message shapes; everything else consumes the
 * parsed union types.
 */

export const MODULES = 72;
export const COUNT_CHANNELS = 84;

export interface Hello {
  type: "hello";
  version: number;
  mode: "raw" | "force";
  threshold: number;
  frets: number;
  strings: number;
  frame_period_ms: number;
}

export interface ForceFrameMsg {
  type: "frame";
  mode: "force";
  seq: number;
  t_ms: number;
  forces: number[];
  over: boolean[];
}

export interface RawFrameMsg {
  type: "frame";
  mode: "raw";
  seq: number;
  t_ms: number;
  counts: number[];
}

export interface Heartbeat {
  type: "heartbeat";
  mode: "raw" | "force";
  received: number;
  published: number;
  dropped: number;
  gaps: number;
  missing: number;
  recording: boolean;
  threshold: number;
}

export interface Ack {
  type: "ack";
  cmd?: string;
  ok: boolean;
  error?: string;
  threshold?: number;
  path?: string;
  frames_written?: number;
  modules?: number;
  mode?: string;
}

export interface End {
  type: "end";
  published: number;
}

export type ServerMessage = Hello | ForceFrameMsg | RawFrameMsg | Heartbeat | Ack | End;

const isNum = (v: unknown): v is number => typeof v === "number" && Number.isFinite(v);
const isBool = (v: unknown): v is boolean => typeof v === "boolean";

function numArray(v: unknown, n: number): v is number[] {
  return Array.isArray(v) && v.length === n && v.every(isNum);
}

function boolArray(v: unknown, n: number): v is boolean[] {
  return Array.isArray(v) && v.length === n && v.every(isBool);
}

/** Parse one protocol line. Malformed input returns null; the caller counts
 * and drops it (the stream itself stays usable). */
export function parseServerMessage(line: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const m = msg as Record<string, unknown>;

  switch (m.type) {
    case "hello":
      if (
        isNum(m.version) && (m.mode === "raw" || m.mode === "force") &&
        isNum(m.threshold) && isNum(m.frets) && isNum(m.strings) &&
        isNum(m.frame_period_ms)
      ) {
        return m as unknown as Hello;
      }
      return null;
    case "frame":
      if (!isNum(m.seq) || !isNum(m.t_ms)) return null;
      if (m.mode === "force" && numArray(m.forces, MODULES) && boolArray(m.over, MODULES)) {
        return m as unknown as ForceFrameMsg;
      }
      if (m.mode === "raw" && numArray(m.counts, COUNT_CHANNELS)) {
        return m as unknown as RawFrameMsg;
      }
      return null;
    case "heartbeat":
      if (
        (m.mode === "raw" || m.mode === "force") && isNum(m.received) &&
        isNum(m.published) && isNum(m.dropped) && isNum(m.gaps) &&
        isNum(m.missing) && isBool(m.recording) && isNum(m.threshold)
      ) {
        return m as unknown as Heartbeat;
      }
      return null;
    case "ack":
      if (isBool(m.ok)) return m as unknown as Ack;
      return null;
    case "end":
      if (isNum(m.published)) return m as unknown as End;
      return null;
    default:
      return null;
  }
}

export type Command =
  | { cmd: "set_threshold"; value: number; fret?: number; string?: number }
  | { cmd: "start_recording" }
  | { cmd: "stop_recording" };

export function serializeCommand(cmd: Command): string {
  return JSON.stringify(cmd);
}

/** Linear tile index used throughout the protocol: (fret-1)*6 + (string-1). */
export function moduleIndex(fret: number, str: number): number {
  if (fret < 1 || fret > 12 || str < 1 || str > 6) {
    throw new RangeError(`no module at fret ${fret}, string ${str}`);
  }
  return (fret - 1) * 6 + (str - 1);
}
