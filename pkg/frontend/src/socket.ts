/** Reconnecting socket shell.
 *
 * Wraps whatever WebSocket-shaped constructor it is given (the real
 * one in the browser, a fake in tests) and adds exponential-backoff
 * reconnection.  Sends while the link is down report failure instead
 * of throwing, so callers can surface a dropped-input indicator.
 */

export interface WebSocketish {
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
}

export interface SocketHooks {
  onOpen: () => void;
  onClose: () => void;
  onMessage: (text: string) => void;
}

export const BACKOFF_MS = [500, 1000, 2000, 4000, 8000];
const OPEN = 1;

export class ReconnectingSocket {
  private ws: WebSocketish | null = null;
  private attempts = 0;
  private stopped = false;

  constructor(
    private readonly makeWs: () => WebSocketish,
    private readonly hooks: SocketHooks,
    private readonly schedule: (fn: () => void, ms: number) => void = (fn, ms) => {
      setTimeout(fn, ms);
    },
  ) {}

  connect(): void {
    if (this.stopped) return;
    const ws = this.makeWs();
    this.ws = ws;
    ws.onopen = () => {
      this.attempts = 0;
      this.hooks.onOpen();
    };
    ws.onclose = () => {
      if (this.ws !== ws) return; // superseded by a newer attempt
      this.ws = null;
      this.hooks.onClose();
      this.scheduleReconnect();
    };
    ws.onmessage = (ev) => this.hooks.onMessage(ev.data);
  }

  private scheduleReconnect(): void {
    if (this.stopped) return;
    const delay = BACKOFF_MS[Math.min(this.attempts, BACKOFF_MS.length - 1)];
    this.attempts += 1;
    this.schedule(() => this.connect(), delay);
  }

  /** True if the frame went out; false (and nothing sent) while down. */
  trySend(text: string): boolean {
    if (this.ws !== null && this.ws.readyState === OPEN) {
      this.ws.send(text);
      return true;
    }
    return false;
  }

  close(): void {
    this.stopped = true;
    this.ws?.close();
    this.ws = null;
  }
}
