/** Client-side epipolar geometry: line computation from a fundamental
 * matrix, snapping a click onto a line, and two-view triangulation.
 *
 * All pixel coordinates are (x, y) in image space; 3D points are in the
 * calibration frame (millimetres).
 */

export type Vec2 = [number, number];
export type Vec3 = [number, number, number];
export type Mat3 = number[][]; // 3x3, row major
export type Mat34 = number[][]; // 3x4, row major

export interface Line2 {
  /** a*x + b*y + c = 0 with hypot(a, b) = 1. */
  a: number;
  b: number;
  c: number;
}

/** Epipolar line in the second view for a pixel clicked in the first:
 * l = F * [x, y, 1], normalised so point-line distance is in pixels. */
export function epipolarLine(f: Mat3, pixel: Vec2): Line2 {
  const h = [pixel[0], pixel[1], 1];
  const l = [0, 0, 0];
  for (let r = 0; r < 3; r++) {
    l[r] = f[r][0] * h[0] + f[r][1] * h[1] + f[r][2] * h[2];
  }
  const norm = Math.hypot(l[0], l[1]);
  if (norm < 1e-12) {
    throw new Error("degenerate epipolar line (clicked the epipole?)");
  }
  return { a: l[0] / norm, b: l[1] / norm, c: l[2] / norm };
}

/** Signed point-line distance in pixels. */
export function pointLineDistance(line: Line2, pixel: Vec2): number {
  return line.a * pixel[0] + line.b * pixel[1] + line.c;
}

/** Orthogonal projection of a click onto a line. */
export function snapToLine(line: Line2, pixel: Vec2): Vec2 {
  const d = pointLineDistance(line, pixel);
  return [pixel[0] - d * line.a, pixel[1] - d * line.b];
}

/** Solve a symmetric positive-definite 3x3 system by Gaussian
 * elimination with partial pivoting. */
function solve3(m: number[][], rhs: Vec3): Vec3 {
  const a = m.map((row, i) => [...row, rhs[i]]);
  for (let col = 0; col < 3; col++) {
    let pivot = col;
    for (let r = col + 1; r < 3; r++) {
      if (Math.abs(a[r][col]) > Math.abs(a[pivot][col])) pivot = r;
    }
    if (Math.abs(a[pivot][col]) < 1e-14) {
      throw new Error("singular triangulation system");
    }
    [a[col], a[pivot]] = [a[pivot], a[col]];
    for (let r = 0; r < 3; r++) {
      if (r === col) continue;
      const factor = a[r][col] / a[col][col];
      for (let k = col; k < 4; k++) a[r][k] -= factor * a[col][k];
    }
  }
  return [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]];
}

/** Two-view linear triangulation: each observation (x, y) under
 * projection P contributes rows x*P3 - P1 and y*P3 - P2 of the system
 * A*[X;1] = 0, solved in the inhomogeneous least-squares sense. */
export function triangulateTwoView(
  pa: Mat34,
  pixelA: Vec2,
  pb: Mat34,
  pixelB: Vec2,
): Vec3 {
  const rows: number[][] = [];
  const rhs: number[] = [];
  for (const [p, pix] of [
    [pa, pixelA],
    [pb, pixelB],
  ] as [Mat34, Vec2][]) {
    for (const [coord, rowIdx] of [
      [pix[0], 0],
      [pix[1], 1],
    ] as [number, number][]) {
      const row = [0, 0, 0];
      for (let k = 0; k < 3; k++) {
        row[k] = coord * p[2][k] - p[rowIdx][k];
      }
      rows.push(row);
      rhs.push(p[rowIdx][3] - coord * p[2][3]);
    }
  }
  // Normal equations A^T A x = A^T b.
  const ata = [
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
  ];
  const atb: Vec3 = [0, 0, 0];
  for (let r = 0; r < rows.length; r++) {
    for (let i = 0; i < 3; i++) {
      atb[i] += rows[r][i] * rhs[r];
      for (let j = 0; j < 3; j++) {
        ata[i][j] += rows[r][i] * rows[r][j];
      }
    }
  }
  return solve3(ata, atb);
}

/** Project a 3D point through a 3x4 projection matrix. */
export function project(p: Mat34, x: Vec3): Vec2 {
  const h = [x[0], x[1], x[2], 1];
  const out = [0, 0, 0];
  for (let r = 0; r < 3; r++) {
    out[r] = p[r][0] * h[0] + p[r][1] * h[1] + p[r][2] * h[2] + p[r][3];
  }
  if (Math.abs(out[2]) < 1e-12) {
    throw new Error("point projects to infinity");
  }
  return [out[0] / out[2], out[1] / out[2]];
}
