"""Synthetic ground truth: parametric grass-like plants, a ring of
calibrated cameras, and a silhouette rasterizer. Serves as the test
oracle for the full pipeline."""

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .geometry import Camera, PotModel, Scene, scene_to_json
from . import geometry
from .leafmodel import LeafDatabase, LeafRecord


@dataclass
class SyntheticPlant:
    leaves: list               # of (n, 3) polylines, tip first, mm
    base: np.ndarray
    seed: int


@dataclass
class RenderConfig:
    image_size: int = 1024
    camera_count: int = 4
    ring_radius: float = 1400.0
    ring_height: float = 250.0   # camera height above the plant base
    focal_px: float = 1600.0
    stroke_px: float = 4.0       # leaf draw width in px at pot distance
    constant_width: bool = False

    def __post_init__(self):
        if self.camera_count < 2:
            raise ValueError("need at least 2 cameras")


def _look_at(position, target, up):
    z = target - position
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def make_rig(config, pot_centre=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """Ring of cameras covering 360 degrees around the pot."""
    pot_centre = np.asarray(pot_centre, dtype=float)
    up = np.asarray(up, dtype=float)
    size = config.image_size
    k = np.array([[config.focal_px, 0.0, size / 2.0],
                  [0.0, config.focal_px, size / 2.0],
                  [0.0, 0.0, 1.0]])
    target = pot_centre + 150.0 * up
    cameras = []
    for i in range(config.camera_count):
        angle = 2.0 * np.pi * i / config.camera_count
        pos = pot_centre + config.ring_radius * \
            np.array([np.cos(angle), np.sin(angle), 0.0]) + \
            config.ring_height * up
        r = _look_at(pos, target, up)
        t = -r @ pos
        p = k @ np.hstack([r, t[:, None]])
        cameras.append(Camera(projection=p, width=size, height=size, id=i))
    pot = PotModel(axis_base=pot_centre - 100.0 * up, axis_dir=up,
                   frustum_radii=(55.0, 70.0), height=100.0)
    return Scene(cameras=cameras, pot_centre=pot_centre, up=up,
                 pot_occluder=pot)


def generate_plant(seed, leaf_count, base=(0.0, 0.0, 0.0)):
    """Deterministic grass plant: each leaf rises from the shared base,
    arcs outward and droops; smooth (per-step turn well under 45 deg)."""
    if not 1 <= leaf_count <= 12:
        raise ValueError("leaf_count must be in [1, 12]")
    rng = np.random.default_rng(seed)
    base = np.asarray(base, dtype=float)
    leaves = []
    azimuths = (2.0 * np.pi * np.arange(leaf_count) / leaf_count
                + rng.uniform(-0.25, 0.25, size=leaf_count)
                + rng.uniform(0.0, 2.0 * np.pi))
    for i in range(leaf_count):
        length = rng.uniform(220.0, 340.0)
        theta0 = np.radians(rng.uniform(10.0, 30.0))
        theta1 = np.radians(rng.uniform(55.0, 125.0))
        phi = azimuths[i]
        drift = rng.uniform(-0.4, 0.4)  # rad of azimuth drift over the leaf
        steps = 40
        ds = length / steps
        pts = [base.copy()]
        pos = base.copy()
        for k in range(steps):
            s = (k + 0.5) / steps
            theta = theta0 + (theta1 - theta0) * s * s
            az = phi + drift * s
            d = np.array([np.sin(theta) * np.cos(az),
                          np.sin(theta) * np.sin(az),
                          np.cos(theta)])
            pos = pos + ds * d
            pts.append(pos.copy())
        poly = np.array(pts[::-1])  # tip first
        leaves.append(poly)
    return SyntheticPlant(leaves=leaves, base=base, seed=seed)


def polyline_length(poly):
    return float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())


def manual_length(poly, others, divergence_mm=5.0, step=2.0):
    """Tip-to-divergence length of a ground-truth polyline, mirroring the
    manual measurement protocol: walking from the base towards the tip,
    the leaf is measured from the first point farther than divergence_mm
    from every other leaf. poly is tip-first."""
    if not others:
        return polyline_length(poly)
    dense = _densify(poly, step=step)
    arcs = np.concatenate([[0.0], np.cumsum(
        np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    other_pts = np.concatenate([_densify(o, step=step) for o in others])
    for i in range(len(dense) - 1, -1, -1):
        if np.linalg.norm(other_pts - dense[i], axis=1).min() > divergence_mm:
            return float(arcs[i])
    return float(arcs[1]) if len(arcs) > 1 else polyline_length(poly)


def _densify(poly, step=1.0):
    arcs = np.concatenate([[0.0], np.cumsum(
        np.linalg.norm(np.diff(poly, axis=0), axis=1))])
    total = arcs[-1]
    n = max(2, int(np.ceil(total / step)) + 1)
    s = np.linspace(0.0, total, n)
    out = np.empty((n, 3))
    for k in range(3):
        out[:, k] = np.interp(s, arcs, poly[:, k])
    return out


def render_silhouettes(plant, scene, config):
    """Per-view binary masks of the plant; samples occluded by the pot
    (or out of frame) contribute no pixels."""
    masks = {}
    for cam in scene.cameras:
        img = np.zeros((cam.height, cam.width), dtype=bool)
        c = cam.centre
        for poly in plant.leaves:
            dense = _densify(poly, step=1.0)
            visible = ~geometry.is_occluded_many(scene, cam, dense)
            if not visible.any():
                continue
            pts = dense[visible]
            pix, _ = geometry.project_many(cam, pts)
            if config.constant_width:
                px_w = np.full(len(pts), max(1, int(round(config.stroke_px))))
            else:
                # Stroke width scales inversely with depth, mimicking
                # perspective leaf thickness.
                depth = np.linalg.norm(pts - c, axis=1)
                px_w = np.maximum(1, np.round(
                    config.stroke_px * config.ring_radius / depth).astype(int))
            xs = np.round(pix[:, 0]).astype(int)
            ys = np.round(pix[:, 1]).astype(int)
            for w in np.unique(px_w):
                sel = px_w == w
                r = w / 2.0
                kk = int(np.floor(r))
                dy, dx = np.mgrid[-kk:kk + 1, -kk:kk + 1]
                keep = dx ** 2 + dy ** 2 <= r ** 2
                dy, dx = dy[keep], dx[keep]
                yy = (ys[sel][:, None] + dy[None, :]).ravel()
                xx = (xs[sel][:, None] + dx[None, :]).ravel()
                ok = (yy >= 0) & (yy < cam.height) & \
                     (xx >= 0) & (xx < cam.width)
                img[yy[ok], xx[ok]] = True
        masks[cam.id] = img
    return masks


def build_synthetic_database(plants, holdout, augment_count=100, seed=0):
    """Leaf database from every plant except the holdout, augmented."""
    if len(plants) < 2:
        raise ValueError("need at least 2 plants")
    ids = [p.seed for p in plants]
    if holdout not in ids:
        raise KeyError(f"unknown holdout plant id {holdout}")
    records = []
    for plant in plants:
        if plant.seed == holdout:
            continue
        for j, poly in enumerate(plant.leaves):
            records.append(LeafRecord(id=f"p{plant.seed}/l{j}",
                                      polyline=poly,
                                      source_plant=f"p{plant.seed}"))
    db = LeafDatabase(records=records)
    db.augment_all(count=augment_count, seed=seed)
    return db


def truth_to_json(plant):
    leaves = []
    for j, poly in enumerate(plant.leaves):
        others = [p for k, p in enumerate(plant.leaves) if k != j]
        leaves.append({"points": [[float(x) for x in p] for p in poly],
                       "length_mm": manual_length(poly, others),
                       "full_length_mm": polyline_length(poly)})
    return {
        "base": [float(x) for x in plant.base],
        "seed": int(plant.seed),
        "leaves": leaves,
    }


def write_dataset(out_dir, plant, scene, config):
    """Emit cameras.json, mask_<v>.png and truth.json."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    masks = render_silhouettes(plant, scene, config)
    for view, bits in masks.items():
        Image.fromarray(bits.astype(np.uint8) * 255, mode="L").save(
            f"{out_dir}/mask_{view}.png")
    with open(f"{out_dir}/cameras.json", "w") as f:
        json.dump(scene_to_json(scene), f, indent=1)
    with open(f"{out_dir}/truth.json", "w") as f:
        json.dump(truth_to_json(plant), f, indent=1)
