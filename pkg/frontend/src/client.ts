/**
 * Reconnecting line-oriented client over WebSocket.
 *
 * The service speaks newline-delimited JSON on its client port and
 * auto-upgrades that port to WebSocket when the peer opens with an HTTP
 * handshake, so a browser can connect directly. One WebSocket message may
 * carry several lines (or a partial one); we re-split on '\n' here.
 *
 * The socket factory is injectable so tests can drive fakes with fake
 * timers instead of real sockets.
 */

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface LineClientOptions {
  url: string;
  makeSocket?: SocketFactory;
  onLine: (line: string, now: number) => void;
  onOpen?: (now: number) => void;
  onDown?: (now: number) => void;
  backoffBaseMs?: number; // first retry delay
  backoffCapMs?: number;
  now?: () => number;
}

const DEFAULT_BASE_MS = 500;
const DEFAULT_CAP_MS = 8000;

export class LineClient {
  private opts: Required<Pick<LineClientOptions, "url" | "onLine">> & LineClientOptions;
  private socket: SocketLike | null = null;
  private buffer = "";
  private attempts = 0;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(opts: LineClientOptions) {
    this.opts = opts;
  }

  private nowMs(): number {
    return this.opts.now ? this.opts.now() : Date.now();
  }

  get retryDelayMs(): number {
    const base = this.opts.backoffBaseMs ?? DEFAULT_BASE_MS;
    const cap = this.opts.backoffCapMs ?? DEFAULT_CAP_MS;
    return Math.min(cap, base * 2 ** Math.max(0, this.attempts - 1));
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  send(line: string): boolean {
    if (!this.socket) return false;
    try {
      this.socket.send(line.endsWith("\n") ? line : line + "\n");
      return true;
    } catch {
      return false;
    }
  }

  close(): void {
    this.stopped = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    const s = this.socket;
    this.socket = null;
    if (s) {
      s.onclose = null;
      s.onerror = null;
      try {
        s.close();
      } catch {
        // already dead
      }
    }
  }

  private open(): void {
    this.attempts += 1;
    const make: SocketFactory =
      this.opts.makeSocket ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    let s: SocketLike;
    try {
      s = make(this.opts.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    this.socket = s;
    this.buffer = "";
    s.onopen = () => {
      this.attempts = 0;
      this.opts.onOpen?.(this.nowMs());
    };
    s.onmessage = (ev) => {
      if (typeof ev.data === "string") this.ingest(ev.data);
    };
    const down = () => {
      if (this.socket !== s) return; // stale socket
      this.socket = null;
      this.opts.onDown?.(this.nowMs());
      this.scheduleRetry();
    };
    s.onclose = down;
    s.onerror = down;
  }

  private ingest(chunk: string): void {
    this.buffer += chunk;
    let at: number;
    while ((at = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, at).replace(/\r$/, "");
      this.buffer = this.buffer.slice(at + 1);
      if (line.length) this.opts.onLine(line, this.nowMs());
    }
  }

  private scheduleRetry(): void {
    if (this.stopped || this.retryTimer !== null) return;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.stopped) this.open();
    }, this.retryDelayMs);
  }
}

/** Resolve the service address from ?service=host:port, default localhost. */
export function serviceUrl(search: string, fallback = "127.0.0.1:7200"): string {
  const params = new URLSearchParams(search);
  const addr = params.get("service") || fallback;
  return `ws://${addr}/`;
}
