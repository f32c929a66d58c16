// Latest-wins frame buffering between the stream and the render loop.
//
// The stream can outpace rendering; the buffer keeps only the newest frame
// and never lets the display go backwards in sequence order.

import { FrameMessage } from "./types.js";

export class LatestFrameBuffer {
  private latest: FrameMessage | null = null;
  private lastSeq = -1;
  dropped = 0;

  /** Accept a frame; stale (seq <= newest seen) frames are counted and dropped. */
  push(frame: FrameMessage): boolean {
    if (frame.seq <= this.lastSeq) {
      this.dropped++;
      return false;
    }
    if (this.latest !== null) this.dropped++;
    this.latest = frame;
    this.lastSeq = frame.seq;
    return true;
  }

  /** Hand the newest frame to the renderer (at most once per frame). */
  take(): FrameMessage | null {
    const out = this.latest;
    this.latest = null;
    return out;
  }

  get newestSeq(): number {
    return this.lastSeq;
  }
}

export type StreamState = "connecting" | "open" | "closed";

export interface StreamHandle {
  close(): void;
}

/**
 * Attach a WebSocket to a buffer. `onState` fires on connect/disconnect so
 * the UI can show a reconnect indicator; a closed stream is re-dialed with
 * a delay until `close` is called.
 */
export function consumeStream(
  makeSocket: () => WebSocket,
  buffer: LatestFrameBuffer,
  onState: (s: StreamState) => void,
  redialMs = 1000
): StreamHandle {
  let closed = false;
  let socket: WebSocket | null = null;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const dial = () => {
    if (closed) return;
    onState("connecting");
    socket = makeSocket();
    socket.onopen = () => onState("open");
    socket.onmessage = (ev) => {
      try {
        const msg = JSON.parse(typeof ev.data === "string" ? ev.data : "");
        if (typeof msg.seq === "number" && typeof msg.png === "string") {
          buffer.push(msg as FrameMessage);
        }
      } catch {
        // malformed frame: ignore
      }
    };
    socket.onclose = () => {
      onState("closed");
      if (!closed) timer = setTimeout(dial, redialMs);
    };
    socket.onerror = () => {
      try {
        socket?.close();
      } catch {
        /* already closed */
      }
    };
  };
  dial();

  return {
    close() {
      closed = true;
      if (timer) clearTimeout(timer);
      try {
        socket?.close();
      } catch {
        /* already closed */
      }
    },
  };
}
