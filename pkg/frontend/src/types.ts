// Wire types shared with the session service.

export interface MaskJson {
  height: number;
  width: number;
  data: string; // base64 of raw little-endian float32, row-major
}

export interface ColorSpec {
  kind: "color";
  weight?: number;
  color: [number, number, number]; // generator range [-1, 1]
  mask: MaskJson;
}

export interface SketchSpec {
  kind: "sketch";
  weight?: number;
  mask: MaskJson;
}

export interface WarpSpec {
  kind: "warp";
  weight?: number;
  rect: [number, number, number, number]; // y, x, h, w at model resolution
  displacement: [number, number]; // dy, dx
}

export type ConstraintSpec = ColorSpec | SketchSpec | WarpSpec;

export interface FrameMessage {
  seq: number;
  png: string; // base64 PNG
  energy: number;
}

export interface SessionInfo {
  id: string;
  model: string;
  resolution: number;
  latent_dim: number;
  blank: boolean;
  z0: number[];
  z: number[];
  history_length: number;
  busy: boolean;
}

export interface CandidateInfo {
  z: number[];
  png: string;
  energy: number;
}

export interface PointerSample {
  x: number; // display-canvas coordinates
  y: number;
}
