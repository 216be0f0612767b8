// WebSocket /stream consumer with reconnect, exponential backoff, and a
// stale flag while disconnected.

import type { StreamFrame } from "./types.js";

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  close(): void;
}

export interface StreamOptions {
  url: string;
  onFrame: (frame: StreamFrame) => void;
  onStatus?: (status: "connected" | "stale") => void;
  wsFactory?: (url: string) => WebSocketLike;
  baseBackoffMs?: number;
  maxBackoffMs?: number;
  schedule?: (fn: () => void, ms: number) => unknown;
}

export class StreamClient {
  private ws: WebSocketLike | null = null;
  private attempts = 0;
  private closed = false;
  private readonly base: number;
  private readonly max: number;
  private readonly makeWs: (url: string) => WebSocketLike;
  private readonly schedule: (fn: () => void, ms: number) => unknown;

  constructor(private options: StreamOptions) {
    this.base = options.baseBackoffMs ?? 1000;
    this.max = options.maxBackoffMs ?? 30_000;
    this.makeWs = options.wsFactory ?? ((url) => new WebSocket(url) as unknown as WebSocketLike);
    this.schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  connect(): void {
    if (this.closed) return;
    const ws = this.makeWs(this.options.url);
    this.ws = ws;
    ws.onopen = () => {
      this.attempts = 0;
      this.options.onStatus?.("connected");
    };
    ws.onmessage = (ev) => {
      this.options.onFrame(JSON.parse(ev.data) as StreamFrame);
    };
    ws.onclose = () => {
      if (this.closed) return;
      this.options.onStatus?.("stale");
      this.schedule(() => {
        this.attempts += 1;
        this.connect();
      }, this.nextBackoffMs());
    };
  }

  nextBackoffMs(): number {
    return Math.min(this.base * 2 ** this.attempts, this.max);
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
