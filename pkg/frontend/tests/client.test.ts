import { afterEach, beforeEach, describe, expect, test, vi } from "vitest";
import { LineClient, SocketLike, serviceUrl } from "../src/client.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.closed = true;
  }
}

function harness(extra: Partial<ConstructorParameters<typeof LineClient>[0]> = {}) {
  const sockets: FakeSocket[] = [];
  const lines: string[] = [];
  const client = new LineClient({
    url: "ws://example:7200/",
    makeSocket: () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    onLine: (line) => lines.push(line),
    ...extra,
  });
  return { client, sockets, lines };
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("line splitting", () => {
  test("reassembles partial and coalesced websocket messages", () => {
    const { client, sockets, lines } = harness();
    client.connect();
    const s = sockets[0]!;
    s.onopen?.();
    s.onmessage?.({ data: '{"a": 1}\n{"b"' });
    expect(lines).toEqual(['{"a": 1}']);
    s.onmessage?.({ data: ": 2}\n\n" });
    expect(lines).toEqual(['{"a": 1}', '{"b": 2}']);
    s.onmessage?.({ data: "x\r\n" });
    expect(lines).toEqual(['{"a": 1}', '{"b": 2}', "x"]);
    client.close();
  });

  test("non-string payloads are ignored", () => {
    const { client, sockets, lines } = harness();
    client.connect();
    sockets[0]!.onmessage?.({ data: new ArrayBuffer(4) });
    expect(lines).toEqual([]);
    client.close();
  });
});

describe("send", () => {
  test("appends the newline the protocol requires", () => {
    const { client, sockets } = harness();
    client.connect();
    expect(client.send('{"cmd": "start_recording"}')).toBe(true);
    expect(sockets[0]!.sent).toEqual(['{"cmd": "start_recording"}\n']);
    expect(client.send("already terminated\n")).toBe(true);
    expect(sockets[0]!.sent[1]).toBe("already terminated\n");
  });

  test("returns false with no socket", () => {
    const { client } = harness();
    expect(client.send("x")).toBe(false);
  });
});

describe("reconnect with backoff", () => {
  test("doubles the delay up to the cap", () => {
    const { client, sockets } = harness();
    client.connect();
    expect(sockets).toHaveLength(1);

    const expected = [500, 1000, 2000, 4000, 8000, 8000];
    for (const delay of expected) {
      sockets[sockets.length - 1]!.onclose?.();
      const before = sockets.length;
      vi.advanceTimersByTime(delay - 1);
      expect(sockets).toHaveLength(before);
      vi.advanceTimersByTime(1);
      expect(sockets).toHaveLength(before + 1);
    }
    client.close();
  });

  test("a successful open resets the backoff", () => {
    const { client, sockets } = harness();
    client.connect();
    sockets[0]!.onclose?.();
    vi.advanceTimersByTime(500);
    sockets[1]!.onclose?.();
    vi.advanceTimersByTime(1000);
    expect(sockets).toHaveLength(3);
    sockets[2]!.onopen?.(); // success
    sockets[2]!.onclose?.();
    vi.advanceTimersByTime(500); // back to the base delay
    expect(sockets).toHaveLength(4);
    client.close();
  });

  test("onDown fires on drop and close() stops retrying", () => {
    const downs: number[] = [];
    const { client, sockets } = harness({ onDown: (now) => downs.push(now) });
    client.connect();
    sockets[0]!.onopen?.();
    sockets[0]!.onclose?.();
    expect(downs).toHaveLength(1);
    client.close();
    vi.advanceTimersByTime(60000);
    expect(sockets).toHaveLength(1);
  });

  test("a stale socket's close event cannot kill the replacement", () => {
    const { client, sockets } = harness();
    client.connect();
    const first = sockets[0]!;
    first.onclose?.();
    vi.advanceTimersByTime(500);
    expect(sockets).toHaveLength(2);
    first.onclose?.(); // late duplicate event from the dead socket
    vi.advanceTimersByTime(60000);
    expect(sockets).toHaveLength(2); // no spurious extra reconnect
    client.close();
  });
});

describe("serviceUrl", () => {
  test("defaults to localhost and honors ?service=", () => {
    expect(serviceUrl("")).toBe("ws://127.0.0.1:7200/");
    expect(serviceUrl("?service=10.0.0.5:9000")).toBe("ws://10.0.0.5:9000/");
    expect(serviceUrl("?other=1&service=box:7201")).toBe("ws://box:7201/");
  });
});
