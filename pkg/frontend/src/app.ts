// Studio wiring: canvas, brushes, stream, candidates, slider, transfer.

import { sliderToFrame, StudioClient } from "./api.js";
import { BrushTool, strokeToConstraint, warpConstraint } from "./brushes.js";
import { consumeStream, LatestFrameBuffer, StreamState } from "./stream.js";
import { CandidateInfo, ConstraintSpec, PointerSample } from "./types.js";

const CANVAS_SIZE = 384;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function pngSrc(b64: string): string {
  return `data:image/png;base64,${b64}`;
}

class Studio {
  client: StudioClient;
  sessionId: string | null = null;
  resolution = 32;
  tool: BrushTool = { kind: "color", color: [0.8, -0.6, -0.6], size: 2 };
  trace: PointerSample[] = [];
  drawing = false;
  warpStart: PointerSample | null = null;
  warpRect: { x: number; y: number; w: number; h: number } | null = null;
  pending: ConstraintSpec[] = [];
  buffer = new LatestFrameBuffer();
  stream: { close(): void } | null = null;
  interpolationFrames: string[] = [];
  lastFramePng: string | null = null;

  canvas = el<HTMLCanvasElement>("frame");
  overlay = el<HTMLCanvasElement>("overlay");
  status = el<HTMLSpanElement>("status");
  energy = el<HTMLSpanElement>("energy");
  grid = el<HTMLDivElement>("candidates");
  strip = el<HTMLDivElement>("transfer-strip");
  slider = el<HTMLInputElement>("slider");

  constructor() {
    const api = new URLSearchParams(location.search).get("api");
    this.client = new StudioClient(api ?? location.origin);
    this.canvas.width = this.canvas.height = CANVAS_SIZE;
    this.overlay.width = this.overlay.height = CANVAS_SIZE;
    this.bindTools();
    this.bindPointer();
    this.bindActions();
    this.renderLoop();
  }

  // --- session -------------------------------------------------------------

  async start(photoB64: string | null) {
    const created = await this.client.createSession(photoB64);
    this.sessionId = created.id;
    this.resolution = created.resolution;
    this.drawFrame(created.frame);
    this.stream?.close();
    this.stream = consumeStream(
      () => new WebSocket(this.client.wsUrl(created.id)),
      this.buffer,
      (s: StreamState) => {
        this.status.textContent = s === "open" ? "live" : s;
      }
    );
  }

  // --- canvas --------------------------------------------------------------

  drawFrame(b64: string) {
    this.lastFramePng = b64;
    const img = new Image();
    img.onload = () => {
      const ctx = this.canvas.getContext("2d")!;
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(img, 0, 0, CANVAS_SIZE, CANVAS_SIZE);
    };
    img.src = pngSrc(b64);
  }

  renderLoop() {
    const tick = () => {
      const frame = this.buffer.take();
      if (frame) {
        this.drawFrame(frame.png);
        this.energy.textContent = frame.energy.toFixed(4);
      }
      requestAnimationFrame(tick);
    };
    requestAnimationFrame(tick);
  }

  drawOverlay() {
    const ctx = this.overlay.getContext("2d")!;
    ctx.clearRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
    if (this.tool.kind === "warp") {
      if (this.warpRect) {
        ctx.strokeStyle = "#ff5050";
        ctx.strokeRect(this.warpRect.x, this.warpRect.y, this.warpRect.w, this.warpRect.h);
      }
      return;
    }
    if (this.trace.length > 1) {
      ctx.strokeStyle = this.tool.kind === "color" ? this.cssColor() : "#202020";
      ctx.lineWidth = (this.tool.size * CANVAS_SIZE) / this.resolution;
      ctx.lineCap = "round";
      ctx.beginPath();
      ctx.moveTo(this.trace[0].x, this.trace[0].y);
      for (const p of this.trace.slice(1)) ctx.lineTo(p.x, p.y);
      ctx.stroke();
    }
  }

  cssColor(): string {
    const [r, g, b] = this.tool.color.map((v) => Math.round(((v + 1) / 2) * 255));
    return `rgb(${r},${g},${b})`;
  }

  // --- gestures ------------------------------------------------------------

  bindPointer() {
    const pos = (ev: PointerEvent): PointerSample => {
      const rect = this.overlay.getBoundingClientRect();
      return {
        x: ((ev.clientX - rect.left) / rect.width) * CANVAS_SIZE,
        y: ((ev.clientY - rect.top) / rect.height) * CANVAS_SIZE,
      };
    };
    this.overlay.addEventListener("pointerdown", (ev) => {
      this.drawing = true;
      const p = pos(ev);
      if (this.tool.kind === "warp") {
        if (this.warpRect) return; // second gesture drags the selection
        this.warpStart = p;
      } else {
        this.trace = [p];
      }
    });
    this.overlay.addEventListener("pointermove", (ev) => {
      if (!this.drawing) return;
      const p = pos(ev);
      if (this.tool.kind === "warp") {
        if (this.warpStart && !this.warpRect) {
          const x = Math.min(this.warpStart.x, p.x);
          const y = Math.min(this.warpStart.y, p.y);
          this.drawOverlaySelection(x, y, Math.abs(p.x - this.warpStart.x), Math.abs(p.y - this.warpStart.y));
        }
      } else {
        this.trace.push(p);
        this.drawOverlay();
      }
    });
    this.overlay.addEventListener("pointerup", (ev) => {
      if (!this.drawing) return;
      this.drawing = false;
      const p = pos(ev);
      if (this.tool.kind === "warp") {
        this.finishWarpGesture(p);
      } else {
        this.finishStroke();
      }
    });
  }

  drawOverlaySelection(x: number, y: number, w: number, h: number) {
    const ctx = this.overlay.getContext("2d")!;
    ctx.clearRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
    ctx.strokeStyle = "#ff5050";
    ctx.strokeRect(x, y, w, h);
    this.warpRect = { x, y, w, h };
  }

  async finishStroke() {
    const spec = strokeToConstraint(this.tool, this.trace, CANVAS_SIZE, this.resolution);
    this.trace = [];
    this.drawOverlay();
    if (!spec || !this.sessionId) return; // empty stroke: no request
    this.pending.push(spec);
    try {
      await this.client.putConstraints(this.sessionId, this.pending);
    } catch (err) {
      this.pending.pop();
      this.status.textContent = `constraint rejected: ${(err as Error).message}`;
    }
  }

  async finishWarpGesture(p: PointerSample) {
    if (!this.warpRect || !this.warpStart || !this.sessionId) return;
    // the drag vector runs from the selection center to the release point
    const cx = this.warpRect.x + this.warpRect.w / 2;
    const cy = this.warpRect.y + this.warpRect.h / 2;
    const inside =
      Math.abs(p.x - cx) <= this.warpRect.w / 2 && Math.abs(p.y - cy) <= this.warpRect.h / 2;
    if (inside) return; // selection finished; next gesture drags
    const spec = warpConstraint(
      this.warpRect,
      { dx: p.x - cx, dy: p.y - cy },
      CANVAS_SIZE,
      this.resolution
    );
    this.warpRect = null;
    this.warpStart = null;
    this.drawOverlay();
    if (!spec) return;
    this.pending.push(spec);
    try {
      await this.client.putConstraints(this.sessionId, this.pending);
    } catch (err) {
      this.pending.pop();
      this.status.textContent = `constraint rejected: ${(err as Error).message}`;
    }
  }

  // --- actions -------------------------------------------------------------

  bindTools() {
    for (const kind of ["color", "sketch", "warp"] as const) {
      el<HTMLButtonElement>(`tool-${kind}`).addEventListener("click", () => {
        this.tool.kind = kind;
        this.warpRect = null;
        this.drawOverlay();
      });
    }
    el<HTMLInputElement>("palette").addEventListener("input", (ev) => {
      const hex = (ev.target as HTMLInputElement).value;
      const n = parseInt(hex.slice(1), 16);
      this.tool.color = [
        ((n >> 16) & 255) / 127.5 - 1,
        ((n >> 8) & 255) / 127.5 - 1,
        (n & 255) / 127.5 - 1,
      ];
    });
    el<HTMLInputElement>("brush-size").addEventListener("input", (ev) => {
      this.tool.size = parseInt((ev.target as HTMLInputElement).value, 10);
    });
  }

  bindActions() {
    el<HTMLButtonElement>("new-blank").addEventListener("click", () => {
      void this.start(null);
    });
    el<HTMLInputElement>("photo-input").addEventListener("change", async (ev) => {
      const file = (ev.target as HTMLInputElement).files?.[0];
      if (!file) return;
      const buf = new Uint8Array(await file.arrayBuffer());
      let bin = "";
      for (const byte of buf) bin += String.fromCharCode(byte);
      void this.start(btoa(bin));
    });
    el<HTMLButtonElement>("step").addEventListener("click", async () => {
      if (!this.sessionId) return;
      await this.client.step(this.sessionId, 5);
    });
    el<HTMLButtonElement>("show-candidates").addEventListener("click", async () => {
      if (!this.sessionId) return;
      const { candidates } = await this.client.candidates(this.sessionId);
      this.showCandidates(candidates);
    });
    el<HTMLButtonElement>("load-slider").addEventListener("click", async () => {
      if (!this.sessionId) return;
      const { frames } = await this.client.interpolation(this.sessionId, 7);
      this.interpolationFrames = frames;
      this.slider.disabled = false;
    });
    this.slider.addEventListener("input", () => {
      if (this.interpolationFrames.length === 0) return;
      const idx = sliderToFrame(
        parseFloat(this.slider.value), this.interpolationFrames.length
      );
      this.drawFrame(this.interpolationFrames[idx]);
    });
    el<HTMLButtonElement>("run-transfer").addEventListener("click", async () => {
      if (!this.sessionId) return;
      const { frames } = await this.client.transfer(this.sessionId);
      this.strip.innerHTML = "";
      for (const b64 of frames) {
        const img = document.createElement("img");
        img.src = pngSrc(b64);
        img.className = "transfer-frame";
        this.strip.appendChild(img);
      }
    });
    el<HTMLButtonElement>("clear-brushes").addEventListener("click", () => {
      this.pending = [];
    });
  }

  showCandidates(candidates: CandidateInfo[]) {
    this.grid.innerHTML = "";
    for (const cand of candidates) {
      const img = document.createElement("img");
      img.src = pngSrc(cand.png);
      img.title = `energy ${cand.energy.toFixed(4)}`;
      img.className = "candidate";
      img.addEventListener("click", async () => {
        if (!this.sessionId) return;
        const { frame } = await this.client.accept(this.sessionId, cand.z);
        this.drawFrame(frame);
      });
      this.grid.appendChild(img);
    }
  }
}

window.addEventListener("DOMContentLoaded", () => {
  new Studio();
});
