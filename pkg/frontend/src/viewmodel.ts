/**
 * Pure board state: a fold over received protocol lines plus wall-clock
 * ticks. No DOM, no sockets, so every UI rule is unit-testable.
 *
 * Rules enforced here, per the service contract:
 * - a tile is red iff the service flagged it (no client-side thresholding)
 * - threshold / recording state change only on service acknowledgment
 *   (or heartbeat, which carries authoritative server state)
 * - a command with no ack within 1 s is marked failed, state unchanged
 * - no message of any kind for 2 s means disconnected
 */

import {
  Ack,
  Command,
  MODULES,
  ServerMessage,
  parseServerMessage,
  serializeCommand,
} from "./protocol.js";

export const ACK_TIMEOUT_MS = 1000;
export const SILENCE_TIMEOUT_MS = 2000;

export type Connection = "connecting" | "live" | "disconnected";

export interface PendingCommand {
  cmd: string;
  sentAt: number;
}

export interface BoardState {
  connection: Connection;
  mode: "raw" | "force" | null;
  threshold: number | null; // acknowledged value only
  recording: boolean;
  recordingPath: string | null;
  forces: number[]; // last force frame, newtons
  over: boolean[]; // service's over-threshold flags
  seq: number | null;
  tMs: number | null;
  frameCount: number;
  errorCount: number; // malformed messages dropped
  lastMessageAt: number | null;
  heartbeat: { received: number; dropped: number; gaps: number } | null;
  pending: PendingCommand[];
  lastFailure: string | null;
  replayEnded: boolean;
}

export function initialState(): BoardState {
  return {
    connection: "connecting",
    mode: null,
    threshold: null,
    recording: false,
    recordingPath: null,
    forces: new Array(MODULES).fill(0),
    over: new Array(MODULES).fill(false),
    seq: null,
    tMs: null,
    frameCount: 0,
    errorCount: 0,
    lastMessageAt: null,
    heartbeat: null,
    pending: [],
    lastFailure: null,
    replayEnded: false,
  };
}

function applyAck(state: BoardState, ack: Ack): BoardState {
  // Acks come back in command order; resolve the oldest matching entry.
  const idx = state.pending.findIndex((p) => p.cmd === (ack.cmd ?? p.cmd));
  const pending = state.pending.filter((_, i) => i !== idx);
  if (!ack.ok) {
    return { ...state, pending, lastFailure: `${ack.cmd ?? "command"}: ${ack.error ?? "refused"}` };
  }
  const next: BoardState = { ...state, pending, lastFailure: null };
  switch (ack.cmd) {
    case "set_threshold":
      if (typeof ack.threshold === "number") next.threshold = ack.threshold;
      break;
    case "start_recording":
      next.recording = true;
      next.recordingPath = ack.path ?? null;
      break;
    case "stop_recording":
      next.recording = false;
      break;
  }
  return next;
}

export function applyMessage(state: BoardState, msg: ServerMessage, now: number): BoardState {
  const base: BoardState = { ...state, connection: "live", lastMessageAt: now };
  switch (msg.type) {
    case "hello":
      return { ...base, mode: msg.mode, threshold: msg.threshold };
    case "frame":
      if (msg.mode === "force") {
        return {
          ...base,
          mode: "force",
          forces: msg.forces,
          over: msg.over,
          seq: msg.seq,
          tMs: msg.t_ms,
          frameCount: state.frameCount + 1,
        };
      }
      // Raw frames (no calibration / warmup): keep the board idle.
      return { ...base, mode: "raw", seq: msg.seq, tMs: msg.t_ms, frameCount: state.frameCount + 1 };
    case "heartbeat":
      return {
        ...base,
        mode: msg.mode,
        threshold: msg.threshold,
        recording: msg.recording,
        heartbeat: { received: msg.received, dropped: msg.dropped, gaps: msg.gaps },
      };
    case "ack":
      return applyAck(base, msg);
    case "end":
      return { ...base, replayEnded: true };
  }
}

/** Feed one raw line; malformed input bumps the error counter and is dropped. */
export function applyLine(state: BoardState, line: string, now: number): BoardState {
  const msg = parseServerMessage(line);
  if (msg === null) {
    return { ...state, errorCount: state.errorCount + 1 };
  }
  return applyMessage(state, msg, now);
}

/**
 * Stage a command for sending. Returns the new state and the wire line,
 * or null when the command is not legal right now (the UI should have the
 * control disabled; this is the belt to that suspender).
 */
export function stageCommand(
  state: BoardState,
  cmd: Command,
  now: number,
): { state: BoardState; line: string } | null {
  if (state.connection !== "live") return null;
  if (cmd.cmd === "stop_recording" && !state.recording) return null;
  if (cmd.cmd === "start_recording" && state.recording) return null;
  return {
    state: { ...state, pending: [...state.pending, { cmd: cmd.cmd, sentAt: now }] },
    line: serializeCommand(cmd),
  };
}

/** Clock tick: expire unanswered commands, notice a silent server. */
export function tick(state: BoardState, now: number): BoardState {
  let next = state;
  const expired = next.pending.filter((p) => now - p.sentAt >= ACK_TIMEOUT_MS);
  if (expired.length) {
    next = {
      ...next,
      pending: next.pending.filter((p) => now - p.sentAt < ACK_TIMEOUT_MS),
      lastFailure: `${expired[0]!.cmd}: no response`,
    };
  }
  if (
    next.connection === "live" &&
    next.lastMessageAt !== null &&
    now - next.lastMessageAt >= SILENCE_TIMEOUT_MS
  ) {
    next = { ...next, connection: "disconnected" };
  }
  return next;
}

/** Reset for a fresh socket (reconnect); counters survive, stream state resets. */
export function onDisconnect(state: BoardState): BoardState {
  return {
    ...state,
    connection: "disconnected",
    pending: [],
    seq: null,
    heartbeat: null,
  };
}
