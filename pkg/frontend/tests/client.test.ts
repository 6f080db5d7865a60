import { describe, expect, it } from "vitest";

import { SocketLike, StudioClient } from "../src/client";
import type { ServerMessage } from "../src/protocol";

class FakeSocket implements SocketLike {
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  sent: string[] = [];

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.onclose?.();
  }

  serverSays(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) });
  }
}

function makeClient() {
  const sockets: FakeSocket[] = [];
  const timers: Array<() => void> = [];
  const received: ServerMessage[] = [];
  const client = new StudioClient({
    url: "ws://test/ws",
    makeSocket: () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    schedule: (fn) => {
      timers.push(fn);
    },
    clock: () => 0,
    onMessage: (m) => received.push(m),
  });
  return { client, sockets, timers, received };
}

const skeletonMsg = {
  type: "skeleton",
  session: "abc",
  frame_rate: 25,
  names: ["root"],
  parents: [-1],
  offsets: [[0, 0, 0]],
  end_site: [false],
};

describe("StudioClient", () => {
  it("tracks the session id from the skeleton message", () => {
    const { client, sockets } = makeClient();
    client.connect();
    sockets[0].onopen?.();
    client.open("pose", "pace", [[0, 0], [1, 0]], 1);
    sockets[0].serverSays(skeletonMsg);
    expect(client.sessionId).toBe("abc");
    client.step(2);
    const last = JSON.parse(sockets[0].sent.at(-1)!);
    expect(last).toEqual({ type: "step", count: 2, session: "abc" });
  });

  it("reattaches the same session after a reconnect", () => {
    const { client, sockets, timers } = makeClient();
    client.connect();
    sockets[0].onopen?.();
    client.open("pose", "pace");
    sockets[0].serverSays(skeletonMsg);
    sockets[0].close(); // drops; schedule() captured the reconnect
    expect(timers.length).toBeGreaterThan(0);
    timers[timers.length - 1]();
    expect(sockets.length).toBe(2);
    sockets[1].onopen?.();
    const first = JSON.parse(sockets[1].sent[0]);
    expect(first).toEqual({ type: "open", session: "abc" });
  });

  it("never sends invalid outbound messages", () => {
    const { client, sockets } = makeClient();
    client.connect();
    sockets[0].onopen?.();
    expect(() => client.step(0)).toThrow();
    expect(sockets[0].sent.length).toBe(0);
  });

  it("drops malformed inbound frames and keeps streaming", () => {
    const { client, sockets, received } = makeClient();
    client.connect();
    sockets[0].onopen?.();
    sockets[0].onmessage?.({ data: "garbage{" });
    sockets[0].serverSays({ type: "ack" });
    expect(received.map((m) => m.type)).toEqual(["ack"]);
  });
});
