"""Graph over skeleton pixels: 2D tip candidates as eccentric local
maxima, cross-view matching and triangulation of 3D tips, and the
path-novelty filter that removes mid-leaf artifacts.

Node pixels are (x, y) = (column, row), matching projected coordinates.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from . import geometry
from .silhouette import EIGHT


@dataclass
class SkeletonGraph:
    pixels: np.ndarray        # (n, 2) int, (x, y), row-major order
    adjacency: sparse.csr_matrix
    view: int = 0
    n_bridges: int = 0
    bridge_length: float = 0.0
    _kdtree: cKDTree = field(default=None, repr=False, compare=False)

    def nearest_node(self, pixel):
        if self._kdtree is None:
            self._kdtree = cKDTree(self.pixels)
        _, idx = self._kdtree.query(np.asarray(pixel, dtype=float))
        return int(idx)


@dataclass
class TipCandidate2D:
    pixel: np.ndarray
    view: int
    eccentric_distance: float


@dataclass
class Tip3D:
    position: np.ndarray
    supports: list  # of (view, pixel)
    reprojection_rms: float


@dataclass
class BasePoint:
    position: np.ndarray


def build_graph(skeleton):
    """Graph of skeleton pixels with 8-neighbour edges, plus minimal
    bridging edges connecting disjoint components (an MST over the
    closest pixel pairs between components)."""
    bits = skeleton.bits
    if not bits.any():
        raise ValueError("empty skeleton")
    rows, cols = np.nonzero(bits)
    n = len(rows)
    pixels = np.stack([cols, rows], axis=1)
    index = np.full(bits.shape, -1, dtype=np.int64)
    index[rows, cols] = np.arange(n)

    src, dst, wts = [], [], []
    h, w = bits.shape
    for dy, dx, weight in ((0, 1, 1.0), (1, 0, 1.0),
                           (1, 1, np.sqrt(2.0)), (1, -1, np.sqrt(2.0))):
        y2 = rows + dy
        x2 = cols + dx
        ok = (y2 >= 0) & (y2 < h) & (x2 >= 0) & (x2 < w)
        ok[ok] &= bits[y2[ok], x2[ok]]
        a = index[rows[ok], cols[ok]]
        b = index[y2[ok], x2[ok]]
        src.append(a)
        dst.append(b)
        wts.append(np.full(len(a), weight))

    labels, n_comp = ndimage.label(bits, structure=EIGHT)
    comp = labels[rows, cols] - 1
    n_bridges = 0
    bridge_length = 0.0
    if n_comp > 1:
        trees = []
        members = []
        for c in range(n_comp):
            sel = comp == c
            members.append(np.nonzero(sel)[0])
            trees.append(cKDTree(pixels[sel]))
        # Closest pixel pair for every component pair.
        pair_dist = np.full((n_comp, n_comp), np.inf)
        pair_nodes = {}
        for a in range(n_comp):
            for b in range(a + 1, n_comp):
                d, idx = trees[b].query(pixels[members[a]])
                k = int(np.argmin(d))
                pair_dist[a, b] = pair_dist[b, a] = d[k]
                pair_nodes[(a, b)] = (members[a][k], members[b][idx[k]])
        # Prim's MST over components.
        in_tree = {0}
        while len(in_tree) < n_comp:
            best = None
            for a in in_tree:
                for b in range(n_comp):
                    if b in in_tree:
                        continue
                    if best is None or pair_dist[a, b] < best[0]:
                        best = (pair_dist[a, b], a, b)
            d, a, b = best
            key = (a, b) if a < b else (b, a)
            na, nb = pair_nodes[key]
            src.append(np.array([na]))
            dst.append(np.array([nb]))
            wts.append(np.array([d]))
            in_tree.add(b)
            n_bridges += 1
            bridge_length += d

    src = np.concatenate(src) if src else np.empty(0, dtype=int)
    dst = np.concatenate(dst) if dst else np.empty(0, dtype=int)
    wts = np.concatenate(wts) if wts else np.empty(0)
    adj = sparse.csr_matrix(
        (np.concatenate([wts, wts]),
         (np.concatenate([src, dst]), np.concatenate([dst, src]))),
        shape=(n, n))
    return SkeletonGraph(pixels=pixels, adjacency=adj, view=skeleton.source,
                         n_bridges=n_bridges, bridge_length=bridge_length)


def _chunked_eccentricity(adj, chunk=512):
    n = adj.shape[0]
    ecc = np.empty(n)
    for start in range(0, n, chunk):
        d = dijkstra(adj, indices=np.arange(start, min(start + chunk, n)))
        ecc[start:start + chunk] = d.max(axis=1)
    return ecc


def graph_centre(graph):
    """Node of minimum eccentricity; ties broken by row-major pixel
    order (the node array is already row-major)."""
    ecc = _chunked_eccentricity(graph.adjacency)
    return int(np.argmin(ecc))


def detect_tips_2d(graph, radius=5.0):
    """Local maxima of graph distance-to-centre within a graph-metric
    ball; a tip must be >= all neighbours in the ball and > at least one."""
    n = graph.adjacency.shape[0]
    if n == 1:
        return []
    centre = graph_centre(graph)
    dist = dijkstra(graph.adjacency, indices=centre)
    tips = []
    chunk = 512
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        local = dijkstra(graph.adjacency, indices=idx, limit=radius)
        for row, i in enumerate(idx):
            ball = np.nonzero(np.isfinite(local[row]))[0]
            ball = ball[ball != i]
            if len(ball) == 0:
                continue
            if np.all(dist[ball] <= dist[i]) and np.any(dist[ball] < dist[i]):
                tips.append(TipCandidate2D(
                    pixel=graph.pixels[i].astype(float),
                    view=graph.view,
                    eccentric_distance=float(dist[i])))
    return tips


def match_tips(candidates, cameras, epipolar_px=8.0, reproj_px=12.0,
               merge_mm=10.0):
    """Triangulate 3D tips from per-view 2D candidates.

    candidates: dict view id -> list of TipCandidate2D.
    Pairs within the epipolar gate are triangulated; further views attach
    candidates near the projection; duplicates within merge_mm keep the
    lower-rms tip.
    """
    views = sorted(v for v, cands in candidates.items() if cands)
    if len(views) < 2:
        return []
    by_id = {c.id: c for c in cameras}
    raw = []
    for ai in range(len(views)):
        for bi in range(ai + 1, len(views)):
            va, vb = views[ai], views[bi]
            cam_a, cam_b = by_id[va], by_id[vb]
            f = geometry.fundamental_matrix(cam_a, cam_b)
            for ca in candidates[va]:
                line = f @ np.append(ca.pixel, 1.0)
                nrm = np.hypot(line[0], line[1])
                if nrm < 1e-12:
                    continue
                line = line / nrm
                for cb in candidates[vb]:
                    if geometry.point_line_distance(line, cb.pixel) > \
                            epipolar_px:
                        continue
                    try:
                        tri = geometry.triangulate(
                            [(va, ca.pixel), (vb, cb.pixel)], cameras)
                    except geometry.IllConditionedError:
                        continue
                    supports = [(va, np.asarray(ca.pixel, dtype=float)),
                                (vb, np.asarray(cb.pixel, dtype=float))]
                    for vc in views:
                        if vc in (va, vb):
                            continue
                        proj = geometry.project(by_id[vc], tri.position)
                        best = None
                        for cc in candidates[vc]:
                            d = np.linalg.norm(cc.pixel - proj)
                            if d <= reproj_px and (best is None or d < best[0]):
                                best = (d, cc)
                        if best is not None:
                            supports.append(
                                (vc, np.asarray(best[1].pixel, dtype=float)))
                    try:
                        tri = geometry.triangulate(supports, cameras)
                    except geometry.IllConditionedError:
                        continue
                    raw.append(Tip3D(position=tri.position,
                                     supports=supports,
                                     reprojection_rms=tri.rms))
    raw.sort(key=lambda t: t.reprojection_rms)
    merged = []
    for tip in raw:
        if all(np.linalg.norm(tip.position - m.position) >= merge_mm
               for m in merged):
            merged.append(tip)
    return merged


def select_base_point(tips, pot_centre):
    """Base point = triangulated point nearest the input pot centre;
    returns (base, remaining tips)."""
    if not tips:
        raise ValueError("no triangulated points to choose a base from")
    pot_centre = np.asarray(pot_centre, dtype=float)
    dists = [np.linalg.norm(t.position - pot_centre) for t in tips]
    k = int(np.argmin(dists))
    base = BasePoint(position=tips[k].position)
    return base, [t for i, t in enumerate(tips) if i != k]


def _paths_from(graph, source):
    dist, pred = dijkstra(graph.adjacency, indices=source,
                          return_predecessors=True)
    return dist, pred


def _walk_path(pred, node):
    path = []
    while node >= 0:
        path.append(node)
        node = pred[node]
    return path


def filter_tips(tips, base, graphs, scene, silhouette_fields,
                novelty_px=150, silhouette_px=5.0):
    """Remove tips that are likely part way along a leaf.

    Tips are processed in descending 3D distance from the base. A tip is
    kept iff, in at least one view where it is visible, the shortest
    graph path from its supporting pixel to the base pixel contains at
    least novelty_px pixels not on the paths of previously kept
    (farther) tips. Tips whose projection lies farther than
    silhouette_px from the silhouette in any visible view are rejected.
    """
    base_pos = base.position
    per_view = {}
    for view, graph in graphs.items():
        cam = scene.camera_by_id(view)
        try:
            proj = geometry.project(cam, base_pos)
        except geometry.DegenerateProjectionError:
            continue
        node = graph.nearest_node(proj)
        dist, pred = _paths_from(graph, node)
        per_view[view] = (graph, dist, pred)

    supports_by_view = lambda tip: dict(
        (v, p) for v, p in tip.supports)
    order = sorted(tips, key=lambda t: -np.linalg.norm(t.position - base_pos))
    used = {view: set() for view in graphs}
    kept = []
    for tip in order:
        visible = []
        unoccluded = []
        pos = tip.position[None, :]
        for view in graphs:
            cam = scene.camera_by_id(view)
            if not geometry.is_occluded(scene, cam, tip.position):
                visible.append(view)
            if not geometry.pot_occluded_many(scene, cam, pos)[0]:
                unoccluded.append(view)
        if not visible:
            continue
        # The silhouette-proximity test runs in every view the pot does
        # not hide, not just in-frame ones: a projection outside the
        # frame cannot be near the silhouette, and the clamped bilinear
        # read of the distance field returns a large border value there.
        rejected = False
        for view in unoccluded:
            if view not in silhouette_fields:
                continue
            cam = scene.camera_by_id(view)
            proj = geometry.project(cam, tip.position)
            if silhouette_fields[view].sample_bilinear(proj[0], proj[1]) > \
                    silhouette_px:
                rejected = True
                break
        if rejected:
            continue
        paths = {}
        novel_enough = False
        sup = supports_by_view(tip)
        for view in visible:
            if view not in per_view:
                continue
            graph, dist, pred = per_view[view]
            if view in sup:
                node = graph.nearest_node(sup[view])
            else:
                cam = scene.camera_by_id(view)
                node = graph.nearest_node(geometry.project(cam, tip.position))
            if not np.isfinite(dist[node]):
                continue  # base unreachable in this view
            path = set(_walk_path(pred, node))
            paths[view] = path
            if len(path - used[view]) >= novelty_px:
                novel_enough = True
        if novel_enough:
            kept.append(tip)
            for view, path in paths.items():
                used[view] |= path
    return kept
