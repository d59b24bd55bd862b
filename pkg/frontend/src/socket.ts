// Reconnecting WebSocket wrapper. The browser's WebSocket gives no
// retry; this one backs off through a fixed ladder and resets it on a
// successful open. The socket constructor and clock are injectable so
// tests can run the whole lifecycle with fakes.

export interface SocketLike {
  send(text: string): void;
  close(): void;
  addEventListener(type: "open" | "close" | "error", fn: () => void): void;
  addEventListener(type: "message", fn: (ev: { data: unknown }) => void): void;
}

export interface SocketHandlers {
  onOpen?: () => void;
  onClose?: () => void;
  onConnecting?: () => void;
  onText?: (text: string) => void;
}

export interface SocketOptions {
  factory?: (url: string) => SocketLike;
  schedule?: (fn: () => void, delayMs: number) => unknown;
  cancel?: (handle: unknown) => void;
  backoffMs?: number[];
}

const DEFAULT_BACKOFF_MS = [250, 500, 1000, 2000, 5000];

export class ReconnectingSocket {
  private ws: SocketLike | null = null;
  private open = false;
  private stopped = false;
  private attempt = 0;
  private retryHandle: unknown = null;
  private readonly factory: (url: string) => SocketLike;
  private readonly schedule: (fn: () => void, delayMs: number) => unknown;
  private readonly cancel: (handle: unknown) => void;
  private readonly backoffMs: number[];

  constructor(
    private readonly url: string,
    private readonly handlers: SocketHandlers,
    options: SocketOptions = {},
  ) {
    this.factory = options.factory ??
      ((u) => new WebSocket(u) as unknown as SocketLike);
    this.schedule = options.schedule ??
      ((fn, ms) => setTimeout(fn, ms));
    this.cancel = options.cancel ??
      ((h) => clearTimeout(h as ReturnType<typeof setTimeout>));
    this.backoffMs = options.backoffMs ?? DEFAULT_BACKOFF_MS;
  }

  connect(): void {
    if (this.stopped || this.ws) return;
    this.handlers.onConnecting?.();
    let ws: SocketLike;
    try {
      ws = this.factory(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    this.ws = ws;
    ws.addEventListener("open", () => {
      if (this.ws !== ws) return;
      this.open = true;
      this.attempt = 0;
      this.handlers.onOpen?.();
    });
    ws.addEventListener("close", () => this.dropped(ws));
    ws.addEventListener("error", () => this.dropped(ws));
    ws.addEventListener("message", (ev) => {
      if (this.ws === ws && typeof ev.data === "string") {
        this.handlers.onText?.(ev.data);
      }
    });
  }

  private dropped(ws: SocketLike): void {
    if (this.ws !== ws) return;
    const wasOpen = this.open;
    this.ws = null;
    this.open = false;
    if (wasOpen) this.handlers.onClose?.();
    this.scheduleRetry();
  }

  private scheduleRetry(): void {
    if (this.stopped || this.retryHandle !== null) return;
    const delay =
      this.backoffMs[Math.min(this.attempt, this.backoffMs.length - 1)];
    this.attempt += 1;
    this.retryHandle = this.schedule(() => {
      this.retryHandle = null;
      this.connect();
    }, delay);
  }

  get isOpen(): boolean {
    return this.open;
  }

  sendText(text: string): boolean {
    if (!this.ws || !this.open) return false;
    try {
      this.ws.send(text);
    } catch {
      return false;
    }
    return true;
  }

  close(): void {
    this.stopped = true;
    if (this.retryHandle !== null) {
      this.cancel(this.retryHandle);
      this.retryHandle = null;
    }
    const ws = this.ws;
    this.ws = null;
    this.open = false;
    if (ws) ws.close();
  }
}
