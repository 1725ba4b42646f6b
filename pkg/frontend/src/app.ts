/** Browser UI: two canvas panes showing mask images, epipolar-guided
 * clicking, and database export as a JSON download. Pure static page;
 * the only inputs are a session JSON and the mask images it names. */

import { AnnotationSession, PendingClick } from "./annotator.js";
import { Line2, Vec2 } from "./geometry.js";
import { cameraById, parseSession, SessionFile } from "./session.js";

interface PaneState {
  view: number;
  canvas: HTMLCanvasElement;
  image: HTMLImageElement | null;
  zoom: number;
  panX: number;
  panY: number;
}

let annotation: AnnotationSession | null = null;
let panes: [PaneState, PaneState] | null = null;
let sessionDir = "";

function status(message: string): void {
  const el = document.getElementById("status");
  if (el) el.textContent = message;
}

function toImageCoords(pane: PaneState, ev: MouseEvent): Vec2 {
  const rect = pane.canvas.getBoundingClientRect();
  const x = (ev.clientX - rect.left - pane.panX) / pane.zoom;
  const y = (ev.clientY - rect.top - pane.panY) / pane.zoom;
  return [x, y];
}

function drawPane(pane: PaneState): void {
  const ctx = pane.canvas.getContext("2d");
  if (!ctx || !annotation) return;
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, pane.canvas.width, pane.canvas.height);
  ctx.setTransform(pane.zoom, 0, 0, pane.zoom, pane.panX, pane.panY);
  if (pane.image) ctx.drawImage(pane.image, 0, 0);

  const cam = cameraById(annotation.session, pane.view);
  // Epipolar line of the pending click, drawn in the opposite pane.
  const pending: PendingClick | null = annotation.pending;
  if (pending && pending.view !== pane.view) {
    drawLine(ctx, pending.line, cam.width, cam.height, pane.zoom);
  }
  if (pending && pending.view === pane.view) {
    drawMarker(ctx, pending.pixel, "#ff0", pane.zoom);
  }
  // Clicks of stored points in this pane.
  for (const leaf of [...annotation.leaves.map((l) => l.points),
                      annotation.currentLeaf]) {
    for (const point of leaf) {
      const { clicks } = point;
      if (clicks.viewA === pane.view) {
        drawMarker(ctx, clicks.pixelA, "#0f0", pane.zoom);
      }
      if (clicks.viewB === pane.view) {
        drawMarker(ctx, clicks.pixelB, "#0f0", pane.zoom);
      }
    }
  }
}

function drawLine(
  ctx: CanvasRenderingContext2D,
  line: Line2,
  width: number,
  height: number,
  zoom: number,
): void {
  // Intersect a*x + b*y + c = 0 with the image border.
  const pts: Vec2[] = [];
  const tryPoint = (x: number, y: number) => {
    if (x >= 0 && x <= width && y >= 0 && y <= height) pts.push([x, y]);
  };
  if (Math.abs(line.b) > 1e-9) {
    tryPoint(0, -line.c / line.b);
    tryPoint(width, -(line.c + line.a * width) / line.b);
  }
  if (Math.abs(line.a) > 1e-9) {
    tryPoint(-line.c / line.a, 0);
    tryPoint(-(line.c + line.b * height) / line.a, height);
  }
  if (pts.length < 2) return;
  ctx.strokeStyle = "#f80";
  ctx.lineWidth = 1.5 / zoom;
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  ctx.lineTo(pts[1][0], pts[1][1]);
  ctx.stroke();
}

function drawMarker(
  ctx: CanvasRenderingContext2D,
  pixel: Vec2,
  colour: string,
  zoom: number,
): void {
  ctx.strokeStyle = colour;
  ctx.lineWidth = 1.5 / zoom;
  ctx.beginPath();
  ctx.arc(pixel[0], pixel[1], 4 / zoom, 0, 2 * Math.PI);
  ctx.stroke();
}

function redraw(): void {
  if (!panes) return;
  for (const pane of panes) drawPane(pane);
  if (annotation) {
    const done = annotation.leaves.length;
    const current = annotation.currentLeaf.length;
    status(
      `${done} leaves finished, ${current} points on the current leaf` +
        (annotation.pending ? " — click the orange line in the other pane" : ""),
    );
  }
}

function handleClick(pane: PaneState, ev: MouseEvent): void {
  if (!annotation) return;
  const pixel = toImageCoords(pane, ev);
  try {
    if (annotation.pending && annotation.pending.view !== pane.view) {
      annotation.secondClick(pane.view, pixel);
    } else {
      annotation.firstClick(pane.view, pixel);
    }
  } catch (err) {
    status(String(err));
    return;
  }
  redraw();
}

function loadImage(pane: PaneState, src: string): void {
  const img = new Image();
  img.onload = () => {
    pane.image = img;
    redraw();
  };
  img.onerror = () => status(`could not load ${src}`);
  img.src = src;
}

function setupPanes(session: SessionFile): void {
  const canvasA = document.getElementById("paneA") as HTMLCanvasElement;
  const canvasB = document.getElementById("paneB") as HTMLCanvasElement;
  panes = [
    { view: session.cameras[0].id, canvas: canvasA, image: null,
      zoom: 1, panX: 0, panY: 0 },
    { view: session.cameras[1].id, canvas: canvasB, image: null,
      zoom: 1, panX: 0, panY: 0 },
  ];
  for (const pane of panes) {
    pane.canvas.addEventListener("click", (ev) => handleClick(pane, ev));
    pane.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const factor = ev.deltaY < 0 ? 1.2 : 1 / 1.2;
      const rect = pane.canvas.getBoundingClientRect();
      const cx = ev.clientX - rect.left;
      const cy = ev.clientY - rect.top;
      pane.panX = cx - factor * (cx - pane.panX);
      pane.panY = cy - factor * (cy - pane.panY);
      pane.zoom *= factor;
      redraw();
    });
    const mask = session.masks[pane.view];
    if (mask) loadImage(pane, sessionDir + mask);
  }
}

function exportDatabase(): void {
  if (!annotation) return;
  let payload: string;
  try {
    payload = JSON.stringify(annotation.exportDatabase(), null, 2);
  } catch (err) {
    status(String(err));
    return;
  }
  const blob = new Blob([payload], { type: "application/json" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "database.json";
  link.click();
  URL.revokeObjectURL(link.href);
}

function wireButtons(): void {
  document.getElementById("finish")?.addEventListener("click", () => {
    try {
      annotation?.finishLeaf();
    } catch (err) {
      status(String(err));
      return;
    }
    redraw();
  });
  document.getElementById("undo")?.addEventListener("click", () => {
    annotation?.undo();
    redraw();
  });
  document.getElementById("export")?.addEventListener("click", exportDatabase);
}

async function loadSessionFile(file: File): Promise<void> {
  const text = await file.text();
  const session = parseSession(JSON.parse(text));
  annotation = new AnnotationSession(session);
  setupPanes(session);
  redraw();
}

export function init(): void {
  const input = document.getElementById("session") as HTMLInputElement;
  input?.addEventListener("change", () => {
    const file = input.files?.[0];
    if (file) {
      sessionDir = "";
      loadSessionFile(file).catch((err) => status(String(err)));
    }
  });
  wireButtons();
  status("load a session JSON to begin");
}

if (typeof document !== "undefined") {
  init();
}
