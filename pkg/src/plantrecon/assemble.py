"""Combining per-tip leaf candidates into a plant model by maximising
the interior/exterior/overlap quality metric with repeated random
greedy search."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import geometry


@dataclass
class QualityParams:
    tau: float = 10.0          # px tolerance for skeleton coverage
    beta: float = 1.4          # exterior-pixel penalty weight
    gamma: float = 0.3         # overlap penalty weight
    stroke_width: int = 3      # px, rendered leaf width for exterior pixels
    coverage_width: int = 1    # px, stroke for the coverage distance test

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be >= 0")


@dataclass
class CandidateSet:
    tip: object                # Tip3D
    leaves: list               # of (curve, score), ascending score


@dataclass
class SelectedLeaf:
    tip_index: int
    candidate_index: int
    curve: object
    score: float


@dataclass
class PlantModel:
    leaves: list               # of SelectedLeaf
    quality: float
    per_view_stats: list       # of dicts {interior, exterior, overlap}


def _disk_offsets(width):
    r = width / 2.0
    k = int(np.floor(r))
    dy, dx = np.mgrid[-k:k + 1, -k:k + 1]
    keep = dx ** 2 + dy ** 2 <= r ** 2
    return dy[keep], dx[keep]


def rasterize_curve(curve, camera, scene, width, step_mm=1.5):
    """Binary image of the projected curve stroked with a circular
    brush; occluded samples are skipped."""
    img = np.zeros((camera.height, camera.width), dtype=bool)
    n = max(2, int(np.ceil(curve.arc_length() / step_mm)) + 1)
    ts = curve.param_at_arc(np.linspace(0.0, curve.arc_length(), n))
    pts = curve.evaluate(ts)
    visible = ~geometry.is_occluded_many(scene, camera, pts)
    if not visible.any():
        return img
    pix, _ = geometry.project_many(camera, pts[visible])
    xs = np.round(pix[:, 0]).astype(int)
    ys = np.round(pix[:, 1]).astype(int)
    dy, dx = _disk_offsets(width)
    yy = (ys[:, None] + dy[None, :]).ravel()
    xx = (xs[:, None] + dx[None, :]).ravel()
    ok = (yy >= 0) & (yy < camera.height) & (xx >= 0) & (xx < camera.width)
    img[yy[ok], xx[ok]] = True
    return img


@dataclass
class ViewContext:
    """Per-view precomputation shared by all coverage queries."""
    camera: object
    skeleton_pixels: np.ndarray   # (k, 2) int (x, y)
    skeleton_dt: np.ndarray       # distance to nearest skeleton pixel


def make_view_context(camera, skeleton):
    rows, cols = np.nonzero(skeleton.bits)
    pixels = np.stack([cols, rows], axis=1)
    if skeleton.bits.any():
        dt = ndimage.distance_transform_edt(~skeleton.bits)
    else:
        dt = np.full(skeleton.bits.shape, np.inf)
    return ViewContext(camera=camera, skeleton_pixels=pixels,
                       skeleton_dt=dt)


def leaf_view_footprint(curve, ctx, params, scene):
    """(supported skeleton-pixel indices, exterior rendered-pixel linear
    indices) of one leaf in one view."""
    thin = rasterize_curve(curve, ctx.camera, scene, params.coverage_width)
    if thin.any():
        leaf_dt = ndimage.distance_transform_edt(~thin)
        sup = leaf_dt[ctx.skeleton_pixels[:, 1], ctx.skeleton_pixels[:, 0]] \
            < params.tau
        support_idx = np.nonzero(sup)[0]
    else:
        support_idx = np.empty(0, dtype=int)
    render = rasterize_curve(curve, ctx.camera, scene, params.stroke_width)
    ext = render & (ctx.skeleton_dt > params.tau)
    ext_idx = np.nonzero(ext.ravel())[0]
    return support_idx, ext_idx


def coverage_masks(leaves, camera, skeleton, params, scene=None):
    """Interior pixel set, exterior pixel set and overlap count for a
    set of leaf curves in one view."""
    ctx = make_view_context(camera, skeleton)
    k = len(ctx.skeleton_pixels)
    a = np.zeros(k, dtype=int)
    ext_mask = np.zeros(camera.height * camera.width, dtype=bool)
    for curve in leaves:
        sup, ext = leaf_view_footprint(curve, ctx, params, scene)
        a[sup] += 1
        ext_mask[ext] = True
    interior = {tuple(p) for p in ctx.skeleton_pixels[a > 0]}
    lin = np.nonzero(ext_mask)[0]
    exterior = {(int(i % camera.width), int(i // camera.width)) for i in lin}
    overlap = int((a[a > 0] - 1).sum())
    return interior, exterior, overlap


def quality(leaves, scene, skeletons, params):
    """q = sum over views of |interior| - beta |exterior| - gamma overlap."""
    total = 0.0
    for view, skeleton in skeletons.items():
        cam = scene.camera_by_id(view)
        i, e, o = coverage_masks(leaves, cam, skeleton, params, scene)
        total += len(i) - params.beta * len(e) - params.gamma * o
    return total


class CoverageState:
    """Incremental per-view pixel counts for one greedy run: supports
    O(leaf footprint) trial evaluation and acceptance."""

    def __init__(self, contexts, params, ext_universe):
        self.params = params
        self.views = sorted(contexts)
        self.a = {v: np.zeros(len(contexts[v].skeleton_pixels), dtype=np.int32)
                  for v in self.views}
        # Exterior pixels live in a per-view compacted universe of the
        # union of all candidates' exterior pixels.
        self.ext_counts = {v: np.zeros(len(ext_universe[v]), dtype=np.int32)
                           for v in self.views}
        self.interior = dict.fromkeys(self.views, 0)
        self.exterior = dict.fromkeys(self.views, 0)
        self.overlap = dict.fromkeys(self.views, 0)
        self.q = 0.0

    def delta(self, footprint):
        """Quality change if footprint were added."""
        dq = 0.0
        for v in self.views:
            sup, ext = footprint[v]
            a = self.a[v]
            di = int((a[sup] == 0).sum())
            do = int((a[sup] > 0).sum())
            de = int((self.ext_counts[v][ext] == 0).sum())
            dq += di - self.params.beta * de - self.params.gamma * do
        return dq

    def add(self, footprint):
        for v in self.views:
            sup, ext = footprint[v]
            a = self.a[v]
            self.interior[v] += int((a[sup] == 0).sum())
            self.overlap[v] += int((a[sup] > 0).sum())
            self.exterior[v] += int((self.ext_counts[v][ext] == 0).sum())
            a[sup] += 1
            self.ext_counts[v][ext] += 1
        self.q = sum(self.interior[v] - self.params.beta * self.exterior[v]
                     - self.params.gamma * self.overlap[v]
                     for v in self.views)

    def stats(self):
        return [{"interior": self.interior[v],
                 "exterior": self.exterior[v],
                 "overlap": self.overlap[v]} for v in self.views]


def incremental_quality(state, footprint):
    """q of the state's leaf set plus one leaf; exact, no recomputation."""
    return state.q + state.delta(footprint)


def _compact_footprints(candidates, contexts, params, scene):
    """Per-candidate per-view (support indices, compacted exterior
    indices) plus the per-view exterior universe."""
    raw = {}
    for ti, cset in enumerate(candidates):
        for ci, (curve, _) in enumerate(cset.leaves):
            raw[(ti, ci)] = {
                v: leaf_view_footprint(curve, contexts[v], params, scene)
                for v in contexts}
    universe = {}
    for v in contexts:
        all_ext = [fp[v][1] for fp in raw.values()]
        universe[v] = np.unique(np.concatenate(all_ext)) if all_ext else \
            np.empty(0, dtype=int)
    compact = {}
    for key, fp in raw.items():
        compact[key] = {v: (fp[v][0],
                            np.searchsorted(universe[v], fp[v][1]))
                        for v in contexts}
    return compact, universe


def greedy_select(candidates, runs, seed, scene, skeletons, params):
    """Repeated random greedy search over candidate leaves, at most one
    leaf per tip, maximising the quality metric. Deterministic for a
    fixed (seed, runs); the best-quality run wins, earliest run on ties."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    contexts = {v: make_view_context(scene.camera_by_id(v), skel)
                for v, skel in skeletons.items()}
    pool = [(ti, ci) for ti, cset in enumerate(candidates)
            for ci in range(len(cset.leaves))]
    if not pool:
        return PlantModel(leaves=[], quality=0.0,
                          per_view_stats=[{"interior": 0, "exterior": 0,
                                           "overlap": 0} for _ in skeletons])
    footprints, universe = _compact_footprints(candidates, contexts, params,
                                               scene)
    best = None
    for run in range(runs):
        rng = np.random.default_rng(seed + run)
        order = rng.permutation(len(pool))
        state = CoverageState(contexts, params, universe)
        chosen = []
        used_tips = set()
        for k in order:
            ti, ci = pool[k]
            if ti in used_tips:
                continue
            fp = footprints[(ti, ci)]
            if state.delta(fp) > 0:
                state.add(fp)
                chosen.append((ti, ci))
                used_tips.add(ti)
        if best is None or state.q > best[0]:
            best = (state.q, chosen, state.stats())
    q, chosen, stats = best
    leaves = [SelectedLeaf(tip_index=ti, candidate_index=ci,
                           curve=candidates[ti].leaves[ci][0],
                           score=candidates[ti].leaves[ci][1])
              for ti, ci in sorted(chosen)]
    return PlantModel(leaves=leaves, quality=float(q), per_view_stats=stats)


def select_candidate_set(tip, ranked, max_count=5, min_mean_dist=10.0,
                         n_probe=30):
    """Pick up to max_count refined leaves per tip, skipping near
    duplicates (mean sampled-point distance below min_mean_dist)."""
    chosen = []
    probes = []
    for curve, sc in ranked:
        arcs = np.linspace(0.0, curve.arc_length(), n_probe)
        pts = curve.evaluate(curve.param_at_arc(arcs))
        if all(np.linalg.norm(pts - other, axis=1).mean() >= min_mean_dist
               for other in probes):
            chosen.append((curve, sc))
            probes.append(pts)
        if len(chosen) == max_count:
            break
    return CandidateSet(tip=tip, leaves=chosen)


def model_to_json(model, candidates=None):
    leaves = []
    for leaf in model.leaves:
        curve = leaf.curve
        leaves.append({
            "tip_id": int(leaf.tip_index),
            "control_points": [[[float(x) for x in p] for p in seg.control]
                               for seg in curve.segments],
            "breaks": [float(b) for b in curve.breaks],
            "length_mm": float(curve.arc_length()),
        })
    return {"quality": float(model.quality), "leaves": leaves,
            "per_view": model.per_view_stats}


def model_from_json(data):
    from .leafmodel import LeafCurve, Segment, _clamped_knots
    leaves = []
    for entry in data["leaves"]:
        segs = [Segment(control=np.array(ctrl, dtype=float),
                        knots=_clamped_knots(len(ctrl)))
                for ctrl in entry["control_points"]]
        leaves.append(SelectedLeaf(tip_index=entry["tip_id"],
                                   candidate_index=-1,
                                   curve=LeafCurve(segs),
                                   score=float("nan")))
    return PlantModel(leaves=leaves, quality=data["quality"],
                      per_view_stats=data.get("per_view", []))
