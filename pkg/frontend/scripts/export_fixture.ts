/** Replays the committed annotation vectors through the annotation
 * state machine and writes the exported database JSON, which the
 * pipeline-side round-trip test consumes. Second clicks are offset
 * perpendicular to the epipolar line to exercise snapping. */

import { readFileSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { AnnotationSession } from "../src/annotator.js";
import { Vec2 } from "../src/geometry.js";
import { parseSession } from "../src/session.js";

const here = dirname(fileURLToPath(import.meta.url));
const vectors = join(here, "..", "..", "tests", "vectors");

interface AnnotationVectors {
  view_a: number;
  view_b: number;
  leaves: { clicks_a: Vec2[]; clicks_b: Vec2[] }[];
}

const session = parseSession(
  JSON.parse(readFileSync(join(vectors, "session.json"), "utf8")),
);
const annotation = JSON.parse(
  readFileSync(join(vectors, "annotation.json"), "utf8"),
) as AnnotationVectors;

const state = new AnnotationSession(session, "annotated");
state.selectViews(annotation.view_a, annotation.view_b);
for (const leaf of annotation.leaves) {
  for (let i = 0; i < leaf.clicks_a.length; i++) {
    const line = state.firstClick(annotation.view_a, leaf.clicks_a[i]);
    const [bx, by] = leaf.clicks_b[i];
    const offset: Vec2 = [bx + 40 * line.a, by + 40 * line.b];
    state.secondClick(annotation.view_b, offset);
  }
  state.finishLeaf();
}
const out = join(vectors, "exported_database.json");
writeFileSync(out, JSON.stringify(state.exportDatabase(), null, 1));
console.log(`wrote ${out}`);
