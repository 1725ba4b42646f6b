/** Annotation state machine: two-view leaf axis annotation with
 * epipolar-constrained second clicks, undo, and database export.
 *
 * The user traces each leaf tip-first: first click in one view, second
 * click in the other view snapped onto the epipolar line, which yields
 * one triangulated 3D point.
 */

import {
  epipolarLine,
  Line2,
  snapToLine,
  triangulateTwoView,
  Vec2,
  Vec3,
} from "./geometry.js";
import { cameraById, fundamentalFor, SessionFile } from "./session.js";

export interface SourceClicks {
  viewA: number;
  pixelA: Vec2;
  viewB: number;
  pixelB: Vec2; // after snapping
}

export interface LeafPoint {
  position: Vec3;
  clicks: SourceClicks;
}

export interface CompletedLeaf {
  id: string;
  points: LeafPoint[];
}

export interface PendingClick {
  view: number;
  pixel: Vec2;
  /** Epipolar line of the pending click in the other pane. */
  line: Line2;
}

export interface DatabaseJson {
  leaves: { id: string; plant: string; points: number[][] }[];
}

const MIN_LEAF_POINTS = 2;

export class AnnotationSession {
  readonly session: SessionFile;
  viewA: number;
  viewB: number;
  pending: PendingClick | null = null;
  currentLeaf: LeafPoint[] = [];
  leaves: CompletedLeaf[] = [];
  plantName: string;

  constructor(session: SessionFile, plantName = "annotated") {
    this.session = session;
    this.plantName = plantName;
    this.viewA = session.cameras[0].id;
    this.viewB = session.cameras[1].id;
  }

  selectViews(viewA: number, viewB: number): void {
    if (viewA === viewB) {
      throw new Error("the two panes must show different views");
    }
    cameraById(this.session, viewA);
    cameraById(this.session, viewB);
    this.viewA = viewA;
    this.viewB = viewB;
    this.pending = null;
  }

  private otherView(view: number): number {
    if (view === this.viewA) return this.viewB;
    if (view === this.viewB) return this.viewA;
    throw new Error(`view ${view} is not one of the selected panes`);
  }

  /** First click of a pair: remembers the pixel and returns the
   * epipolar line to draw in the other pane. */
  firstClick(view: number, pixel: Vec2): Line2 {
    const other = this.otherView(view);
    const f = fundamentalFor(this.session, view, other);
    const line = epipolarLine(f, pixel);
    this.pending = { view, pixel, line };
    return line;
  }

  /** Second click: must land in the other pane; it is snapped onto the
   * epipolar line and the 3D point triangulated and appended. */
  secondClick(view: number, pixel: Vec2): LeafPoint {
    if (!this.pending) {
      throw new Error("no pending first click");
    }
    if (view === this.pending.view) {
      throw new Error("second click must be in the other view");
    }
    this.otherView(view); // validates the pane
    const snapped = snapToLine(this.pending.line, pixel);
    const camA = cameraById(this.session, this.pending.view);
    const camB = cameraById(this.session, view);
    const position = triangulateTwoView(
      camA.projection,
      this.pending.pixel,
      camB.projection,
      snapped,
    );
    const point: LeafPoint = {
      position,
      clicks: {
        viewA: this.pending.view,
        pixelA: this.pending.pixel,
        viewB: view,
        pixelB: snapped,
      },
    };
    this.currentLeaf.push(point);
    this.pending = null;
    return point;
  }

  /** Removes the pending click if any, otherwise the last stored point. */
  undo(): void {
    if (this.pending) {
      this.pending = null;
      return;
    }
    if (this.currentLeaf.length > 0) {
      this.currentLeaf.pop();
      return;
    }
    const last = this.leaves.pop();
    if (last) this.currentLeaf = last.points;
  }

  finishLeaf(): CompletedLeaf {
    if (this.currentLeaf.length < MIN_LEAF_POINTS) {
      throw new Error(
        `a leaf needs at least ${MIN_LEAF_POINTS} points ` +
          `(have ${this.currentLeaf.length})`,
      );
    }
    const leaf: CompletedLeaf = {
      id: `${this.plantName}-${this.leaves.length}`,
      points: this.currentLeaf,
    };
    this.leaves.push(leaf);
    this.currentLeaf = [];
    this.pending = null;
    return leaf;
  }

  /** Leaf-database JSON understood by the reconstruction pipeline;
   * points are tip-first in annotation order. */
  exportDatabase(): DatabaseJson {
    if (this.currentLeaf.length > 0) {
      throw new Error("finish or undo the leaf in progress before exporting");
    }
    if (this.leaves.length === 0) {
      throw new Error("nothing to export: no completed leaves");
    }
    return {
      leaves: this.leaves.map((leaf) => ({
        id: leaf.id,
        plant: this.plantName,
        points: leaf.points.map((p) => [...p.position]),
      })),
    };
  }
}
