/** Session file parsing: cameras, pairwise fundamental matrices and
 * mask image paths, as exported by the reconstruction CLI
 * (`export-session`). */

import { Mat3, Mat34 } from "./geometry.js";

export interface CameraInfo {
  id: number;
  projection: Mat34;
  width: number;
  height: number;
}

export interface FundamentalPair {
  a: number;
  b: number;
  f: Mat3; // line in view b for a pixel in view a: l_b = F [x_a, 1]
}

export interface SessionFile {
  cameras: CameraInfo[];
  pairs: FundamentalPair[];
  masks: Record<number, string>;
}

function isMatrix(m: unknown, rows: number, cols: number): m is number[][] {
  return (
    Array.isArray(m) &&
    m.length === rows &&
    m.every(
      (row) =>
        Array.isArray(row) &&
        row.length === cols &&
        row.every((v) => typeof v === "number" && Number.isFinite(v)),
    )
  );
}

export function parseSession(data: unknown): SessionFile {
  const root = data as {
    calibration?: { cameras?: unknown[] };
    fundamental?: unknown[];
    masks?: Record<string, string>;
  };
  if (!root || !root.calibration || !Array.isArray(root.calibration.cameras)) {
    throw new Error("session file has no calibration");
  }
  const cameras: CameraInfo[] = root.calibration.cameras.map((c) => {
    const cam = c as { id: number; P: unknown; width: number; height: number };
    if (!isMatrix(cam.P, 3, 4)) {
      throw new Error(`camera ${cam.id}: projection is not 3x4`);
    }
    return {
      id: cam.id,
      projection: cam.P,
      width: cam.width,
      height: cam.height,
    };
  });
  if (cameras.length < 2) {
    throw new Error("session needs at least two cameras");
  }
  const pairs: FundamentalPair[] = (root.fundamental ?? []).map((p) => {
    const pair = p as { a: number; b: number; F: unknown };
    if (!isMatrix(pair.F, 3, 3)) {
      throw new Error(`pair ${pair.a}-${pair.b}: F is not 3x3`);
    }
    return { a: pair.a, b: pair.b, f: pair.F };
  });
  const masks: Record<number, string> = {};
  for (const [key, value] of Object.entries(root.masks ?? {})) {
    masks[Number(key)] = value;
  }
  return { cameras, pairs, masks };
}

export function cameraById(session: SessionFile, id: number): CameraInfo {
  const cam = session.cameras.find((c) => c.id === id);
  if (!cam) throw new Error(`unknown camera id ${id}`);
  return cam;
}

function transpose(m: Mat3): Mat3 {
  return [0, 1, 2].map((i) => [0, 1, 2].map((j) => m[j][i]));
}

/** Fundamental matrix mapping pixels of viewA to lines in viewB,
 * derived from the stored unordered pairs (F_ba = F_ab^T). */
export function fundamentalFor(
  session: SessionFile,
  viewA: number,
  viewB: number,
): Mat3 {
  for (const pair of session.pairs) {
    if (pair.a === viewA && pair.b === viewB) return pair.f;
    if (pair.a === viewB && pair.b === viewA) return transpose(pair.f);
  }
  throw new Error(`no fundamental matrix for views ${viewA}, ${viewB}`);
}
