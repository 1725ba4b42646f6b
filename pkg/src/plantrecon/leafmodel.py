"""Leaf representation as piecewise cubic B-spline space curves, the leaf
database with stretch augmentation, and anchored placement of database
leaves into a scene.

Curves run tip-first: t=0 is the leaf tip, t=1 the base.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3
CTRL_PER_MM = 1.0 / 30.0  # one control point per 30 mm of segment length
SPLIT_ANGLE_DEG = 45.0
FIT_RMS_MM = 2.0

# Gauss-Legendre nodes/weights on [0, 1], 5 points.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W

_ARC_GRID = 128  # subintervals per segment for the arc-length table


def _clamped_knots(n_ctrl):
    interior = np.linspace(0.0, 1.0, n_ctrl - 2)[1:-1]
    return np.concatenate([np.zeros(4), interior, np.ones(4)])


@dataclass
class Segment:
    control: np.ndarray  # (n, 3)
    knots: np.ndarray

    def spline(self):
        return BSpline(self.knots, self.control, DEGREE, extrapolate=False)

    def eval(self, u, nu=0):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if nu == 0:
            return self.spline()(u)
        return self.spline().derivative(nu)(u)


class LeafCurve:
    """Piecewise cubic B-spline in 3D (mm), C0 across segments, globally
    parameterised on [0, 1] by per-segment arc-length share."""

    def __init__(self, segments, _tables=None):
        if not segments:
            raise ValueError("curve needs at least one segment")
        for seg in segments:
            if len(seg.control) < 4:
                raise ValueError("each segment needs >= 4 control points")
        self.segments = segments
        if _tables is None:
            self._build_tables()
        else:
            self._cum_tables, self._seg_lengths = _tables
        total = self._seg_lengths.sum()
        self._length = float(total)
        bounds = np.concatenate([[0.0], np.cumsum(self._seg_lengths)]) / total
        bounds[-1] = 1.0
        self._bounds = bounds

    def _build_tables(self):
        tables = []
        lengths = []
        edges = np.linspace(0.0, 1.0, _ARC_GRID + 1)
        for seg in self.segments:
            u0 = edges[:-1]
            du = edges[1] - edges[0]
            # Sample |b'(u)| at GL nodes of each subinterval.
            us = (u0[:, None] + du * _GL_X[None, :]).ravel()
            speeds = np.linalg.norm(seg.eval(us, nu=1), axis=-1)
            speeds = speeds.reshape(_ARC_GRID, len(_GL_X))
            seg_arcs = du * speeds @ _GL_W
            cum = np.concatenate([[0.0], np.cumsum(seg_arcs)])
            tables.append(cum)
            lengths.append(cum[-1])
        self._cum_tables = tables
        self._seg_lengths = np.array(lengths)

    @property
    def breaks(self):
        return list(self._bounds[1:-1])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
            raise ValueError("parameter t outside [0, 1]")
        t = np.clip(t, 0.0, 1.0)
        idx = np.minimum(np.searchsorted(self._bounds, t, side="right") - 1,
                         len(self.segments) - 1)
        widths = self._bounds[idx + 1] - self._bounds[idx]
        u = (t - self._bounds[idx]) / widths
        return idx, u, widths

    def evaluate(self, t):
        idx, u, _ = self._locate(t)
        scalar = np.ndim(t) == 0
        idx = np.atleast_1d(idx)
        u = np.atleast_1d(u)
        out = np.empty((len(idx), 3))
        for i, seg in enumerate(self.segments):
            sel = idx == i
            if sel.any():
                out[sel] = seg.eval(u[sel])
        return out[0] if scalar else out

    def derivative(self, t, order=1):
        """Derivative with respect to the global parameter t."""
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        idx, u, widths = self._locate(t)
        scalar = np.ndim(t) == 0
        idx = np.atleast_1d(idx)
        u = np.atleast_1d(u)
        widths = np.atleast_1d(widths)
        out = np.empty((len(idx), 3))
        for i, seg in enumerate(self.segments):
            sel = idx == i
            if sel.any():
                out[sel] = seg.eval(u[sel], nu=order)
        out /= widths[:, None] ** order
        return out[0] if scalar else out

    def curvature(self, t):
        """kappa(t) = |b' x b''| / |b'|^3, in 1/mm."""
        idx, u, _ = self._locate(t)
        scalar = np.ndim(t) == 0
        idx = np.atleast_1d(idx)
        u = np.atleast_1d(u)
        d1 = np.empty((len(idx), 3))
        d2 = np.empty((len(idx), 3))
        for i, seg in enumerate(self.segments):
            sel = idx == i
            if sel.any():
                d1[sel] = seg.eval(u[sel], nu=1)
                d2[sel] = seg.eval(u[sel], nu=2)
        speed = np.linalg.norm(d1, axis=-1)
        if np.any(speed < 1e-9):
            raise ValueError("vanishing first derivative; curvature undefined")
        k = np.linalg.norm(np.cross(d1, d2), axis=-1) / speed ** 3
        return float(k[0]) if scalar else k

    def arc_length(self):
        return self._length

    def arc_position(self, t):
        """Arc length from t=0 to t, mm."""
        idx, u, _ = self._locate(t)
        scalar = np.ndim(t) == 0
        idx = np.atleast_1d(idx)
        u = np.atleast_1d(u)
        grid = np.linspace(0.0, 1.0, _ARC_GRID + 1)
        base = np.concatenate([[0.0], np.cumsum(self._seg_lengths)])
        out = np.empty(len(idx))
        for i in range(len(self.segments)):
            sel = idx == i
            if sel.any():
                out[sel] = base[i] + np.interp(u[sel], grid,
                                               self._cum_tables[i])
        return float(out[0]) if scalar else out

    def param_at_arc(self, s):
        """Inverse of arc_position."""
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(np.clip(s, 0.0, self._length))
        base = np.concatenate([[0.0], np.cumsum(self._seg_lengths)])
        idx = np.minimum(np.searchsorted(base, s, side="right") - 1,
                         len(self.segments) - 1)
        grid = np.linspace(0.0, 1.0, _ARC_GRID + 1)
        out = np.empty(len(s))
        for i in range(len(self.segments)):
            sel = idx == i
            if sel.any():
                u = np.interp(s[sel] - base[i], self._cum_tables[i], grid)
                out[sel] = self._bounds[i] + u * (self._bounds[i + 1]
                                                  - self._bounds[i])
        return float(out[0]) if scalar else out

    def sample_points(self, spacing=7.5):
        """n points at ~equal arc spacing, n = round(L / spacing) + 1."""
        n = max(2, int(round(self._length / spacing)) + 1)
        arcs = np.linspace(0.0, self._length, n)
        ts = self.param_at_arc(arcs)
        ts[0], ts[-1] = 0.0, 1.0
        return ts, self.evaluate(ts)

    def transformed(self, rotation, scale, src_origin, dst_origin):
        """Similarity transform p -> dst + scale * R (p - src)."""
        rotation = np.asarray(rotation, dtype=float)
        segs = [Segment(control=dst_origin + scale *
                        (seg.control - src_origin) @ rotation.T,
                        knots=seg.knots)
                for seg in self.segments]
        tables = ([c * scale for c in self._cum_tables],
                  self._seg_lengths * scale)
        return LeafCurve(segs, _tables=tables)

    def control_vector(self):
        return np.concatenate([seg.control.ravel() for seg in self.segments])

    def with_control_vector(self, vec):
        """Same knot structure and global parameterisation, new controls.

        Arc tables are rebuilt; the caller is expected to keep sample
        parameters frozen while optimising.
        """
        segs = []
        off = 0
        for seg in self.segments:
            n = seg.control.size
            segs.append(Segment(control=vec[off:off + n].reshape(-1, 3),
                                knots=seg.knots))
            off += n
        out = LeafCurve(segs)
        # Preserve the original global parameter mapping so that frozen
        # sample parameters keep addressing the same (segment, u) pairs.
        out._bounds = self._bounds
        return out


def _turn_angles(polyline):
    d = np.diff(polyline, axis=0)
    norms = np.linalg.norm(d, axis=1)
    good = norms > 1e-12
    angles = np.zeros(len(d) - 1)
    for i in range(len(d) - 1):
        if good[i] and good[i + 1]:
            c = d[i] @ d[i + 1] / (norms[i] * norms[i + 1])
            angles[i] = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
    return angles


def _fit_segment(points):
    """Least-squares clamped cubic fit with pinned endpoints."""
    chord = np.concatenate([[0.0],
                            np.cumsum(np.linalg.norm(np.diff(points, axis=0),
                                                     axis=1))])
    length = chord[-1]
    if length <= 0:
        raise ValueError("degenerate (zero-length) polyline segment")
    params = chord / length
    n_ctrl = max(4, int(np.ceil(length * CTRL_PER_MM)))
    while True:
        # Densify so the fit is well-posed, keeping original vertices.
        dense_arcs = np.linspace(0.0, length, max(8 * n_ctrl, 32))
        dense = np.empty((len(dense_arcs), 3))
        for k in range(3):
            dense[:, k] = np.interp(dense_arcs, chord, points[:, k])
        u = dense_arcs / length
        u = np.unique(np.concatenate([u, params]))
        data = np.empty((len(u), 3))
        for k in range(3):
            data[:, k] = np.interp(u * length, chord, points[:, k])
        knots = _clamped_knots(n_ctrl)
        design = BSpline.design_matrix(u, knots, DEGREE).toarray()
        rhs = data - np.outer(design[:, 0], points[0]) \
            - np.outer(design[:, -1], points[-1])
        inner, *_ = np.linalg.lstsq(design[:, 1:-1], rhs, rcond=None)
        control = np.vstack([points[0], inner, points[-1]])
        seg = Segment(control=control, knots=knots)
        resid = seg.eval(params) - points
        rms = np.sqrt((resid ** 2).sum(axis=1).mean())
        if rms <= FIT_RMS_MM or n_ctrl >= len(points) + 2:
            return seg
        n_ctrl += 2


def spline_from_polyline(polyline):
    """Fit a LeafCurve to a 3D polyline, splitting where the turn angle
    exceeds 45 degrees (curvature discontinuities, e.g. stem joints)."""
    pts = np.asarray(polyline, dtype=float)
    if len(pts) < 2:
        raise ValueError("polyline needs at least 2 points")
    if len(pts) > 2:
        angles = _turn_angles(pts)
        split_at = [i + 1 for i, a in enumerate(angles) if a > SPLIT_ANGLE_DEG]
    else:
        split_at = []
    bounds = [0] + split_at + [len(pts) - 1]
    segments = [_fit_segment(pts[bounds[i]:bounds[i + 1] + 1])
                for i in range(len(bounds) - 1)]
    return LeafCurve(segments)


@dataclass
class LeafRecord:
    id: str
    polyline: np.ndarray  # (n, 3), tip first
    source_plant: str = ""
    _curve: LeafCurve = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.polyline = np.asarray(self.polyline, dtype=float)
        if len(self.polyline) < 2:
            raise ValueError("leaf record needs >= 2 points")

    @property
    def tip(self):
        return self.polyline[0]

    @property
    def base(self):
        return self.polyline[-1]

    def curve(self):
        if self._curve is None:
            self._curve = spline_from_polyline(self.polyline)
        return self._curve


def _stretch_axes(record, up):
    d = record.tip - record.base
    n = np.linalg.norm(d)
    d = d / n
    u = up - (up @ d) * d
    if np.linalg.norm(u) < 1e-9:
        # Leaf axis parallel to up; pick any perpendicular.
        u = np.array([1.0, 0.0, 0.0]) - d[0] * d
        if np.linalg.norm(u) < 1e-9:
            u = np.array([0.0, 1.0, 0.0]) - d[1] * d
    u = u / np.linalg.norm(u)
    return np.stack([d, u, np.cross(d, u)])


def augment(record, count=100, seed=0, up=(0.0, 0.0, 1.0),
            factor_range=(0.9, 1.1)):
    """Stretch variants: per-axis scale factors drawn uniformly, applied
    about the leaf base in the (axis, up-perp, cross) frame."""
    rng = np.random.default_rng(seed)
    axes = _stretch_axes(record, np.asarray(up, dtype=float))
    out = []
    rel = record.polyline - record.base
    coords = rel @ axes.T
    for i in range(count):
        f = rng.uniform(factor_range[0], factor_range[1], size=3)
        pts = record.base + (coords * f) @ axes
        out.append(LeafRecord(id=f"{record.id}/aug{i:03d}", polyline=pts,
                              source_plant=record.source_plant))
    return out


@dataclass
class LeafDatabase:
    records: list
    augmented: list = field(default_factory=list)

    def all_records(self):
        return self.records + self.augmented

    def augment_all(self, count=100, seed=0, up=(0.0, 0.0, 1.0)):
        self.augmented = []
        for i, rec in enumerate(self.records):
            self.augmented.extend(augment(rec, count=count, seed=seed + i,
                                          up=up))

    def to_json(self):
        return {"leaves": [{"id": r.id, "plant": r.source_plant,
                            "points": [[float(x) for x in p]
                                       for p in r.polyline]}
                           for r in self.records]}

    @classmethod
    def from_json(cls, data):
        records = [LeafRecord(id=leaf["id"],
                              polyline=np.array(leaf["points"], dtype=float),
                              source_plant=leaf.get("plant", ""))
                   for leaf in data["leaves"]]
        return cls(records=records)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def _anchor_frame(base, tip, up):
    d = tip - base
    n = np.linalg.norm(d)
    d = d / n
    u = up - (up @ d) * d
    nu = np.linalg.norm(u)
    if nu < 1e-6:
        raise ValueError("up vector parallel to base-tip direction")
    u = u / nu
    return np.stack([d, u, np.cross(d, u)], axis=1)  # columns


def place_leaf(record, tip, base, up):
    """Similarity transform anchoring the record's base and tip onto the
    scene's base point and tip point, oriented by the up vector."""
    tip_t = np.asarray(getattr(tip, "position", tip), dtype=float)
    base_t = np.asarray(getattr(base, "position", base), dtype=float)
    up = np.asarray(up, dtype=float)
    span = np.linalg.norm(tip_t - base_t)
    if span <= 10.0:
        raise ValueError("tip and base closer than 10 mm")
    src = _anchor_frame(record.base, record.tip, up)
    dst = _anchor_frame(base_t, tip_t, up)
    rot = dst @ src.T
    scale = span / np.linalg.norm(record.tip - record.base)
    return record.curve().transformed(rot, scale, record.base, base_t)


def arc_length(curve):
    return curve.arc_length()


def sample_points(curve, spacing=7.5):
    ts, pts = curve.sample_points(spacing)
    return list(zip(ts, pts))
