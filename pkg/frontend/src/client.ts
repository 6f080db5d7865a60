// WebSocket client: validates every outbound message, rate-limits control
// edits through the ControlScheduler, reconnects with backoff, and reattaches
// the same server-side session (whose state is authoritative) after a drop.

import {
  ClientMessage,
  ServerMessage,
  decodeServerMessage,
  encodeClientMessage,
} from "./protocol";
import type { Vec2 } from "./protocol";
import { ControlScheduler } from "./rateLimiter";

export interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface StudioClientOptions {
  url: string;
  makeSocket?: SocketFactory;
  onMessage?: (msg: ServerMessage) => void;
  onStatus?: (status: "connecting" | "open" | "closed") => void;
  controlRatePerSec?: number;
  reconnect?: boolean;
  clock?: () => number;
  schedule?: (fn: () => void, delayMs: number) => void;
}

const defaultFactory: SocketFactory = (url) =>
  new (globalThis as { WebSocket: new (url: string) => SocketLike }).WebSocket(url);

export class StudioClient {
  private socket: SocketLike | null = null;
  private attempts = 0;
  private closedByUser = false;
  private lastOpen: ClientMessage | null = null;
  sessionId: string | null = null;
  readonly scheduler: ControlScheduler;
  sentMessages = 0;

  constructor(private readonly opts: StudioClientOptions) {
    const schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.scheduler = new ControlScheduler(
      (msg) => this.sendNow({ ...msg, session: this.sessionId ?? undefined }),
      opts.controlRatePerSec ?? 10,
      opts.clock,
    );
    const pumpLater = () => {
      const wait = this.scheduler.secondsUntilFlush();
      if (wait !== Infinity) {
        schedule(() => {
          this.scheduler.pump();
          pumpLater();
        }, Math.max(1, wait * 1000));
      }
    };
    this.pumpLater = pumpLater;
  }

  private pumpLater: () => void;

  connect(): void {
    this.closedByUser = false;
    this.opts.onStatus?.("connecting");
    const make = this.opts.makeSocket ?? defaultFactory;
    const socket = make(this.opts.url);
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.opts.onStatus?.("open");
      if (this.sessionId) {
        // the server keeps session state; reattach and continue
        this.sendNow({ type: "open", session: this.sessionId });
      } else if (this.lastOpen) {
        this.sendNow(this.lastOpen);
      }
    };
    socket.onmessage = (ev) => {
      const msg = decodeServerMessage(String(ev.data));
      if (!msg) return;
      if (msg.type === "skeleton") this.sessionId = msg.session;
      this.opts.onMessage?.(msg);
    };
    socket.onclose = () => {
      this.opts.onStatus?.("closed");
      if (!this.closedByUser && (this.opts.reconnect ?? true)) {
        const delay = Math.min(500 * 2 ** this.attempts, 10_000);
        this.attempts += 1;
        (this.opts.schedule ?? ((fn, ms) => setTimeout(fn, ms)))(() => this.connect(), delay);
      }
    };
    socket.onerror = () => undefined;
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
  }

  open(pose: string, pace: string, trajectory?: Vec2[], speed?: number): void {
    const msg: ClientMessage = { type: "open", pose, pace, trajectory, speed };
    this.lastOpen = msg;
    this.sessionId = null;
    this.sendNow(msg);
  }

  step(count: number): void {
    this.sendNow({ type: "step", count, session: this.sessionId ?? undefined });
  }

  extendTrajectory(points: Vec2[]): void {
    this.scheduler.queueExtend(points);
    this.pumpLater();
  }

  setTargetSpeed(v: number): void {
    this.scheduler.queueSpeed(v);
    this.pumpLater();
  }

  setFacingOffset(a: number): void {
    this.scheduler.queueFacing(a);
    this.pumpLater();
  }

  flushControls(): void {
    this.scheduler.pump();
  }

  private sendNow(msg: ClientMessage): void {
    const text = encodeClientMessage(msg); // outbound schema validation
    this.sentMessages += 1;
    this.socket?.send(text);
  }
}
