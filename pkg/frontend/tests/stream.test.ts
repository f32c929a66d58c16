import { describe, expect, it } from "vitest";

import { sliderToFrame } from "../src/api.js";
import { LatestFrameBuffer } from "../src/stream.js";

function frame(seq: number) {
  return { seq, png: `frame-${seq}`, energy: seq * 0.1 };
}

describe("latest-wins frame buffer", () => {
  it("hands out the newest frame once", () => {
    const buf = new LatestFrameBuffer();
    buf.push(frame(1));
    buf.push(frame(2));
    expect(buf.take()?.seq).toBe(2);
    expect(buf.take()).toBeNull();
  });

  it("never regresses on out-of-order sequences", () => {
    const buf = new LatestFrameBuffer();
    buf.push(frame(5));
    expect(buf.push(frame(3))).toBe(false);
    expect(buf.push(frame(5))).toBe(false);
    expect(buf.take()?.seq).toBe(5);
    expect(buf.push(frame(6))).toBe(true);
    expect(buf.take()?.seq).toBe(6);
  });

  it("counts drops when rendering falls behind", () => {
    const buf = new LatestFrameBuffer();
    for (let s = 1; s <= 10; s++) buf.push(frame(s));
    expect(buf.take()?.seq).toBe(10);
    expect(buf.dropped).toBe(9);
  });
});

describe("stream consumer", () => {
  class StubSocket {
    onopen: (() => void) | null = null;
    onmessage: ((ev: { data: string }) => void) | null = null;
    onclose: (() => void) | null = null;
    onerror: (() => void) | null = null;
    closed = false;
    close() {
      this.closed = true;
      this.onclose?.();
    }
  }

  it("feeds frames into the buffer and ignores malformed messages", async () => {
    const { consumeStream, LatestFrameBuffer } = await import("../src/stream.js");
    const buf = new LatestFrameBuffer();
    const sockets: StubSocket[] = [];
    const states: string[] = [];
    const handle = consumeStream(
      () => {
        const s = new StubSocket();
        sockets.push(s);
        return s as unknown as WebSocket;
      },
      buf,
      (s) => states.push(s),
      10
    );
    sockets[0].onopen?.();
    sockets[0].onmessage?.({ data: JSON.stringify(frame(1)) });
    sockets[0].onmessage?.({ data: "not json" });
    sockets[0].onmessage?.({ data: JSON.stringify({ nope: true }) });
    expect(buf.take()?.seq).toBe(1);
    expect(states).toEqual(["connecting", "open"]);
    handle.close();
  });

  it("reports disconnects and redials until closed", async () => {
    const { consumeStream, LatestFrameBuffer } = await import("../src/stream.js");
    const sockets: StubSocket[] = [];
    const states: string[] = [];
    const handle = consumeStream(
      () => {
        const s = new StubSocket();
        sockets.push(s);
        return s as unknown as WebSocket;
      },
      new LatestFrameBuffer(),
      (s) => states.push(s),
      5
    );
    sockets[0].onopen?.();
    sockets[0].onclose?.(); // server drops the stream
    expect(states).toEqual(["connecting", "open", "closed"]);
    await new Promise((r) => setTimeout(r, 25));
    expect(sockets.length).toBeGreaterThanOrEqual(2); // redialed
    handle.close();
  });
});

describe("slider mapping", () => {
  it("maps endpoints to anchor and current edit", () => {
    expect(sliderToFrame(0, 8)).toBe(0);
    expect(sliderToFrame(1, 8)).toBe(7);
  });

  it("rounds to the nearest frame", () => {
    expect(sliderToFrame(0.5, 8)).toBe(4); // 0.5*7 = 3.5 -> 4
    expect(sliderToFrame(0.07, 8)).toBe(0);
    expect(sliderToFrame(0.93, 8)).toBe(7);
  });

  it("clamps out-of-range positions", () => {
    expect(sliderToFrame(-0.2, 8)).toBe(0);
    expect(sliderToFrame(1.7, 8)).toBe(7);
  });
});
