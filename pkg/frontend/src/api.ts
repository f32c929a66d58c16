// Typed client for the session service.

import { CandidateInfo, ConstraintSpec, FrameMessage, SessionInfo } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, detail: string) {
    super(detail);
  }
}

async function jfetch<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await resp.json();
  if (!resp.ok) {
    throw new ApiError(resp.status, body.error ?? "error", body.detail ?? "");
  }
  return body as T;
}

export interface CreateResult {
  id: string;
  resolution: number;
  latent_dim: number;
  blank: boolean;
  projection_loss: number | null;
  frame: string;
}

export class StudioClient {
  constructor(public baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  wsUrl(sessionId: string): string {
    const ws = this.baseUrl.replace(/^http/, "ws");
    return `${ws}/sessions/${sessionId}/stream`;
  }

  createSession(photoB64: string | null, model = "default", seed = 0) {
    return jfetch<CreateResult>(this.url("/sessions"), {
      method: "POST",
      body: JSON.stringify({ model, seed, photo: photoB64 }),
    });
  }

  sessionInfo(id: string) {
    return jfetch<SessionInfo>(this.url(`/sessions/${id}`));
  }

  putConstraints(id: string, constraints: ConstraintSpec[]) {
    return jfetch<{ count: number }>(this.url(`/sessions/${id}/constraints`), {
      method: "POST",
      body: JSON.stringify({ constraints }),
    });
  }

  step(id: string, k: number) {
    return jfetch<FrameMessage>(this.url(`/sessions/${id}/step`), {
      method: "POST",
      body: JSON.stringify({ k }),
    });
  }

  candidates(id: string) {
    return jfetch<{ candidates: CandidateInfo[] }>(
      this.url(`/sessions/${id}/candidates`)
    );
  }

  accept(id: string, z: number[]) {
    return jfetch<{ frame: string }>(this.url(`/sessions/${id}/accept`), {
      method: "POST",
      body: JSON.stringify({ z }),
    });
  }

  interpolation(id: string, frames: number) {
    return jfetch<{ frames: string[] }>(
      this.url(`/sessions/${id}/interpolation?frames=${frames}`)
    );
  }

  transfer(id: string) {
    return jfetch<{ frames: string[] }>(this.url(`/sessions/${id}/transfer`), {
      method: "POST",
      body: JSON.stringify({}),
    });
  }

  transform(photoA: string, photoB: string, mode: "shape+color" | "shape-only") {
    return jfetch<{ frames: string[] }>(this.url("/transform"), {
      method: "POST",
      body: JSON.stringify({ photo_a: photoA, photo_b: photoB, mode }),
    });
  }
}

/** Slider position in [0,1] -> interpolation frame index by rounding. */
export function sliderToFrame(position: number, frameCount: number): number {
  const clamped = Math.min(1, Math.max(0, position));
  return Math.round(clamped * (frameCount - 1));
}
