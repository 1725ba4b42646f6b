"""Scoring of placed leaves against skeleton distance fields and
refinement of control points by damped nonlinear least squares.

The objective is a Riemann sum over ~7.5 mm arc samples of the
visibility-weighted distance-field reads plus a curvature-change
penalty; samples are frozen from the pre-refinement curve.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from . import geometry
from .leafmodel import place_leaf
from .optim import levenberg_marquardt

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 2e-7
DEFAULT_SPACING = 7.5
DEFAULT_TOP_K = 200
BREAK_SKIP_MM = 1.0


@dataclass
class LeafScore:
    value: float
    per_sample: np.ndarray
    visible_view_counts: np.ndarray


class _SampledBasis:
    """Frozen per-sample B-spline basis rows (value, d/du, d2/du2) for a
    curve's knot structure, grouped by segment."""

    def __init__(self, curve, ts):
        idx, u, _ = curve._locate(np.asarray(ts, dtype=float))
        self.seg_sample_idx = []
        self.b0 = []
        self.b1 = []
        self.b2 = []
        self.n_ctrl = [len(seg.control) for seg in curve.segments]
        for i, seg in enumerate(curve.segments):
            sel = np.nonzero(idx == i)[0]
            self.seg_sample_idx.append(sel)
            n = len(seg.control)
            basis = BSpline(seg.knots, np.eye(n), 3, extrapolate=False)
            uu = np.clip(u[sel], 0.0, 1.0)
            self.b0.append(basis(uu))
            self.b1.append(basis.derivative(1)(uu))
            self.b2.append(basis.derivative(2)(uu))
        self.n_samples = len(ts)
        self.n_params = 3 * sum(self.n_ctrl)

    def eval(self, controls):
        """controls: (batch, n_params) -> points, d1, d2 each
        (batch, n_samples, 3); derivatives are w.r.t. the segment-local
        parameter (curvature is parameterisation invariant)."""
        b = controls.shape[0]
        pts = np.empty((b, self.n_samples, 3))
        d1 = np.empty((b, self.n_samples, 3))
        d2 = np.empty((b, self.n_samples, 3))
        off = 0
        for i, n in enumerate(self.n_ctrl):
            c = controls[:, off:off + 3 * n].reshape(b, n, 3)
            sel = self.seg_sample_idx[i]
            pts[:, sel] = np.einsum("sn,bnk->bsk", self.b0[i], c)
            d1[:, sel] = np.einsum("sn,bnk->bsk", self.b1[i], c)
            d2[:, sel] = np.einsum("sn,bnk->bsk", self.b2[i], c)
            off += 3 * n
        return pts, d1, d2


def _curvature_from_derivs(d1, d2):
    speed = np.maximum(np.linalg.norm(d1, axis=-1), 1e-9)
    return np.linalg.norm(np.cross(d1, d2), axis=-1) / speed ** 3


class LeafObjective:
    """Frozen sampling of one refinement problem: scene, per-view
    skeleton distance fields, the reference curve and the curvature
    penalty weight."""

    def __init__(self, scene, distance_fields, reference,
                 alpha=DEFAULT_ALPHA, sample_spacing=DEFAULT_SPACING):
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.scene = scene
        self.distance_fields = distance_fields
        self.reference = reference
        self.alpha = alpha
        self.views = sorted(distance_fields)
        self.cameras = [scene.camera_by_id(v) for v in self.views]
        self.caps = [np.hypot(c.width, c.height) for c in self.cameras]

        ts, _ = reference.sample_points(sample_spacing)
        self.ts = ts
        n = len(ts)
        gap = reference.arc_length() / (n - 1)
        ds = np.full(n, gap)
        ds[0] = ds[-1] = gap / 2.0
        self.ds = ds
        # Curvature penalty skips samples within 1 mm of a segment break
        # (kappa is undefined across C1 discontinuities).
        arcs = reference.arc_position(ts)
        mask = np.ones(n, dtype=bool)
        for brk in reference.breaks:
            mask &= np.abs(arcs - reference.arc_position(brk)) > BREAK_SKIP_MM
        self.curv_mask = mask
        self.basis = _SampledBasis(reference, ts)
        _, d1, d2 = self.basis.eval(reference.control_vector()[None, :])
        self.kappa0 = _curvature_from_derivs(d1, d2)[0]

    def _data_terms(self, pts_flat):
        """pts_flat: (m, 3) -> (distance reads (m, V), visibility (m, V))."""
        m = len(pts_flat)
        dist = np.zeros((m, len(self.views)))
        vis = np.zeros((m, len(self.views)), dtype=bool)
        for k, (cam, view) in enumerate(zip(self.cameras, self.views)):
            occluded = geometry.is_occluded_many(self.scene, cam, pts_flat)
            visible = ~occluded
            if not visible.any():
                continue
            pix, _ = geometry.project_many(cam, pts_flat[visible])
            field = self.distance_fields[view]
            dist[visible, k] = field.sample_bilinear(pix[:, 0], pix[:, 1],
                                                     cap=self.caps[k])
            vis[:, k] = visible
        return dist, vis

    def residuals_batch(self, controls):
        """Residual vectors (sqrt of the per-sample objective addends)
        for a (batch, n_params) array of control vectors."""
        controls = np.atleast_2d(controls)
        b = controls.shape[0]
        pts, d1, d2 = self.basis.eval(controls)
        s = self.basis.n_samples
        dist, vis = self._data_terms(pts.reshape(b * s, 3))
        dist = dist.reshape(b, s, -1)
        vis = vis.reshape(b, s, -1)
        nvis = np.maximum(vis.sum(axis=-1), 1)
        data = np.sqrt(self.ds[None, :, None] * dist * vis /
                       nvis[:, :, None])
        kappa = _curvature_from_derivs(d1, d2)
        curv = np.sqrt(self.alpha * self.ds[None, :]) * \
            (kappa - self.kappa0[None, :]) * self.curv_mask[None, :]
        return np.concatenate([data.reshape(b, -1), curv], axis=1)

    def residuals(self, control_vec):
        return self.residuals_batch(control_vec[None, :])[0]


def score(curve, objective):
    """Discretised objective value for an arbitrary curve, evaluated at
    the objective's frozen sample parameters."""
    pts = curve.evaluate(objective.ts)
    dist, vis = objective._data_terms(pts)
    nvis = vis.sum(axis=-1)
    data = (dist * vis).sum(axis=-1) / np.maximum(nvis, 1)
    per_sample = data * objective.ds
    if objective.alpha > 0:
        d1 = curve.derivative(objective.ts, 1)
        d2 = curve.derivative(objective.ts, 2)
        kappa = _curvature_from_derivs(d1, d2)
        dk = (kappa - objective.kappa0) * objective.curv_mask
        per_sample = per_sample + objective.alpha * dk ** 2 * objective.ds
    return LeafScore(value=float(per_sample.sum()), per_sample=per_sample,
                     visible_view_counts=nvis)


def data_only_score(curve, scene, distance_fields,
                    sample_spacing=DEFAULT_SPACING):
    """Distance-field score with no curvature penalty (alpha = 0),
    used to rank database placements."""
    obj = LeafObjective(scene, distance_fields, curve, alpha=0.0,
                        sample_spacing=sample_spacing)
    return score(curve, obj).value


def refine_leaf(curve, objective, max_iters=100, rel_tol=1e-6,
                fd_step=1e-4):
    """Levenberg-Marquardt over all control-point coordinates. The
    returned curve never scores worse than the input."""
    x0 = curve.control_vector()
    x, _ = levenberg_marquardt(objective.residuals, x0,
                               max_iters=max_iters, lam0=1e-3,
                               fd_step=fd_step, rel_tol=rel_tol,
                               batch_fn=objective.residuals_batch)
    refined = curve.with_control_vector(x)
    if score(refined, objective).value > score(curve, objective).value:
        return curve
    return refined


@dataclass
class RankedCandidate:
    record_id: str
    curve: object
    score: float


def rank_candidates(database, tip, base, up, scene, distance_fields,
                    top_k=DEFAULT_TOP_K, sample_spacing=DEFAULT_SPACING):
    """Place every database record (base + augmented) onto (tip, base),
    score with alpha = 0, and return the best top_k ascending."""
    records = database.all_records()
    if not records:
        raise ValueError("empty leaf database")
    entries = []  # (record_id, curve, sample pts slice)
    all_pts = []
    offsets = [0]
    for rec in records:
        try:
            curve = place_leaf(rec, tip, base, up)
        except ValueError as exc:
            log.info("skipping record %s: %s", rec.id, exc)
            continue
        _, pts = curve.sample_points(sample_spacing)
        entries.append((rec.id, curve, len(pts)))
        all_pts.append(pts)
        offsets.append(offsets[-1] + len(pts))
    if not entries:
        return []
    flat = np.concatenate(all_pts)
    views = sorted(distance_fields)
    cameras = [scene.camera_by_id(v) for v in views]
    dist = np.zeros((len(flat), len(views)))
    vis = np.zeros((len(flat), len(views)), dtype=bool)
    for k, (cam, view) in enumerate(zip(cameras, views)):
        visible = ~geometry.is_occluded_many(scene, cam, flat)
        if visible.any():
            pix, _ = geometry.project_many(cam, flat[visible])
            cap = np.hypot(cam.width, cam.height)
            dist[visible, k] = distance_fields[view].sample_bilinear(
                pix[:, 0], pix[:, 1], cap=cap)
            vis[:, k] = visible
    nvis = np.maximum(vis.sum(axis=-1), 1)
    per_point = (dist * vis).sum(axis=-1) / nvis
    bounds = np.array(offsets)
    ranked = []
    for i, (rec_id, curve, n) in enumerate(entries):
        seg = per_point[bounds[i]:bounds[i + 1]]
        gap = curve.arc_length() / (n - 1)
        ds = np.full(n, gap)
        ds[0] = ds[-1] = gap / 2.0
        ranked.append(RankedCandidate(record_id=rec_id, curve=curve,
                                      score=float(seg @ ds)))
    ranked.sort(key=lambda c: (c.score, c.record_id))
    return ranked[:top_k]
