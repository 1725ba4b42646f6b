"""Projective camera model, epipolar geometry, triangulation and
reprojection-based calibration refinement.

World coordinates are millimetres; image coordinates are pixels.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import rq
from scipy.spatial.transform import Rotation

from .optim import levenberg_marquardt


class DegenerateProjectionError(ValueError):
    """Point projects to a vanishing homogeneous coordinate."""


class IllConditionedError(ValueError):
    """Triangulation rays are near parallel."""


class UnderdeterminedError(ValueError):
    """Not enough correspondences to refine a camera."""


@dataclass
class Camera:
    """Calibrated projective view: 3x4 projection matrix plus image size."""
    projection: np.ndarray
    width: int
    height: int
    id: int = 0

    def __post_init__(self):
        p = np.asarray(self.projection, dtype=float)
        if p.shape != (3, 4):
            raise ValueError("projection must be 3x4")
        if abs(np.linalg.det(p[:, :3])) < 1e-12 * max(np.abs(p).max(), 1.0):
            raise ValueError("left 3x3 of projection must be full rank")
        # Fix the overall sign so that positive homogeneous w means the
        # point is in front of the camera.
        if np.linalg.det(p[:, :3]) < 0:
            p = -p
        self.projection = p
        self._centre = None

    @property
    def centre(self):
        """Camera centre: right null space of the projection matrix."""
        if self._centre is None:
            _, _, vt = np.linalg.svd(self.projection)
            c = vt[-1]
            self._centre = c[:3] / c[3]
        return self._centre


@dataclass
class PotModel:
    """Conical frustum approximating the pot and pot holder."""
    axis_base: np.ndarray
    axis_dir: np.ndarray
    frustum_radii: tuple  # (bottom mm, top mm)
    height: float

    def __post_init__(self):
        self.axis_base = np.asarray(self.axis_base, dtype=float)
        d = np.asarray(self.axis_dir, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("axis_dir must be nonzero")
        self.axis_dir = d / n
        if min(self.frustum_radii) <= 0 or self.height <= 0:
            raise ValueError("pot radii and height must be positive")
        # Orthonormal frame with z along the pot axis, fixed at build time.
        tmp = np.array([1.0, 0.0, 0.0])
        if abs(self.axis_dir @ tmp) > 0.9:
            tmp = np.array([0.0, 1.0, 0.0])
        u = np.cross(self.axis_dir, tmp)
        u /= np.linalg.norm(u)
        v = np.cross(self.axis_dir, u)
        self.basis = np.stack([u, v, self.axis_dir])


@dataclass
class Scene:
    cameras: list
    pot_centre: np.ndarray
    up: np.ndarray
    pot_occluder: PotModel = None

    def __post_init__(self):
        if len(self.cameras) < 2:
            raise ValueError("scene requires at least 2 cameras")
        self.pot_centre = np.asarray(self.pot_centre, dtype=float)
        self.up = np.asarray(self.up, dtype=float)
        if abs(np.linalg.norm(self.up) - 1.0) > 1e-9:
            raise ValueError("up vector must be unit length")

    def camera_by_id(self, view):
        for cam in self.cameras:
            if cam.id == view:
                return cam
        raise KeyError(f"no camera with id {view}")


@dataclass
class Correspondence:
    world: np.ndarray
    pixel: np.ndarray
    view: int


@dataclass
class TriangulatedPoint:
    position: np.ndarray
    rms: float


def project(camera, point):
    """Project a 3D point to dehomogenised pixel coordinates."""
    x = camera.projection @ np.append(np.asarray(point, dtype=float), 1.0)
    if abs(x[2]) < 1e-12 * max(1.0, np.abs(x[:2]).max()):
        raise DegenerateProjectionError("point on principal plane")
    return x[:2] / x[2]


def project_many(camera, points):
    """Vectorised projection of an (n, 3) array.

    Returns (pixels (n, 2), w (n,)); rows with w <= 0 are behind the
    camera and carry unusable pixel values.
    """
    pts = np.asarray(points, dtype=float)
    hom = pts @ camera.projection[:, :3].T + camera.projection[:, 3]
    w = hom[:, 2]
    safe = np.where(np.abs(w) < 1e-300, 1.0, w)
    return hom[:, :2] / safe[:, None], w


def fundamental_matrix(camera_a, camera_b):
    """F such that x_b^T F x_a = 0 for projections of a common 3D point."""
    ca = camera_a.centre
    cb = camera_b.centre
    if np.linalg.norm(ca - cb) < 1e-9:
        raise ValueError("cameras share a centre; epipolar geometry undefined")
    e_b = camera_b.projection @ np.append(ca, 1.0)
    ex = np.array([[0, -e_b[2], e_b[1]],
                   [e_b[2], 0, -e_b[0]],
                   [-e_b[1], e_b[0], 0]])
    f = ex @ camera_b.projection @ np.linalg.pinv(camera_a.projection)
    return f


def epipolar_line(camera_a, camera_b, pixel_a):
    """Epipolar line (a, b, c) in view b for a pixel in view a, with
    a^2 + b^2 = 1."""
    f = fundamental_matrix(camera_a, camera_b)
    line = f @ np.append(np.asarray(pixel_a, dtype=float), 1.0)
    n = np.hypot(line[0], line[1])
    if n < 1e-12:
        raise ValueError("degenerate epipolar line (pixel at the epipole?)")
    return line / n


def point_line_distance(line, pixel):
    return abs(line[0] * pixel[0] + line[1] * pixel[1] + line[2]) / \
        np.hypot(line[0], line[1])


def triangulate(observations, cameras):
    """3D point minimising the sum of squared reprojection distances.

    observations: list of (view id, 2D pixel). Linear DLT initialisation
    followed by Levenberg-Marquardt polish.
    """
    views = {v for v, _ in observations}
    if len(views) < 2:
        raise ValueError("triangulation requires observations in >= 2 views")
    by_id = {c.id: c for c in cameras}
    rows = []
    cams = []
    pixels = []
    for view, pix in observations:
        cam = by_id[view]
        p = cam.projection
        u, v = pix
        rows.append(u * p[2] - p[0])
        rows.append(v * p[2] - p[1])
        cams.append(cam)
        pixels.append(np.asarray(pix, dtype=float))
    a = np.array(rows)
    s = np.linalg.svd(a, compute_uv=False)
    if s[-2] <= 0 or s[0] / s[-2] > 1e10:
        raise IllConditionedError("near-parallel rays")
    _, _, vt = np.linalg.svd(a)
    x0 = vt[-1]
    if abs(x0[3]) < 1e-14:
        raise IllConditionedError("point at infinity")
    x0 = x0[:3] / x0[3]

    def residual(x):
        return np.concatenate([project(c, x) - p for c, p in zip(cams, pixels)])

    x, cost = levenberg_marquardt(residual, x0, max_iters=50, rel_tol=1e-14)
    rms = float(np.sqrt(cost / len(cams)))
    return TriangulatedPoint(position=x, rms=rms)


def _decompose_projection(p):
    """P -> (K with positive diagonal, rotation R, translation t)."""
    m = p[:, :3]
    k, r = rq(m)
    signs = np.sign(np.diag(k))
    signs[signs == 0] = 1.0
    s = np.diag(signs)
    k = k @ s
    r = s @ r
    t = np.linalg.solve(k, p[:, 3])
    return k, r, t


def _compose_projection(k, r, t):
    return k @ np.hstack([r, t[:, None]])


def refine_calibration(cameras, correspondences, priors=None):
    """Refine camera poses to minimise squared reprojection distances plus
    weighted quadratic deviations of the pose parameters from priors.

    Each camera is parameterised as a 6-DoF pose delta (rotation vector,
    translation offset) about its input pose, with intrinsics fixed.
    priors maps camera id -> (values (6,), weights (6,)).
    """
    per_cam = {c.id: [] for c in cameras}
    for corr in correspondences:
        if corr.view not in per_cam:
            raise KeyError(f"correspondence for unknown camera {corr.view}")
        per_cam[corr.view].append(corr)
    for cam in cameras:
        if len(per_cam[cam.id]) < 6:
            raise UnderdeterminedError(
                f"camera {cam.id} has {len(per_cam[cam.id])} correspondences; "
                "need at least 6")

    decomp = [_decompose_projection(c.projection) for c in cameras]
    prior_terms = []
    if priors:
        for i, cam in enumerate(cameras):
            if cam.id in priors:
                values, weights = priors[cam.id]
                prior_terms.append((i, np.asarray(values, dtype=float),
                                    np.asarray(weights, dtype=float)))

    def cam_projection(i, params):
        k, r0, t0 = decomp[i]
        omega = params[6 * i:6 * i + 3]
        dt = params[6 * i + 3:6 * i + 6]
        r = Rotation.from_rotvec(omega).as_matrix() @ r0
        return _compose_projection(k, r, t0 + dt)

    cam_index = {c.id: i for i, c in enumerate(cameras)}

    def residual(params):
        projs = [cam_projection(i, params) for i in range(len(cameras))]
        out = []
        for corr in correspondences:
            p = projs[cam_index[corr.view]]
            hom = p @ np.append(corr.world, 1.0)
            out.append(hom[:2] / hom[2] - corr.pixel)
        for i, values, weights in prior_terms:
            x = params[6 * i:6 * i + 6]
            out.append(np.sqrt(weights) * (x - values))
        return np.concatenate(out)

    x0 = np.zeros(6 * len(cameras))
    x, _ = levenberg_marquardt(residual, x0, max_iters=200, fd_step=1e-6,
                               rel_tol=1e-14)
    refined = []
    for i, cam in enumerate(cameras):
        refined.append(Camera(projection=cam_projection(i, x),
                              width=cam.width, height=cam.height, id=cam.id))
    return refined


def _segment_hits_frustum(pot, a, b):
    """True where segments a->b (each (n, 3)) intersect the pot solid."""
    pa = (a - pot.axis_base) @ pot.basis.T
    pb = (b - pot.axis_base) @ pot.basis.T

    rb, rt = pot.frustum_radii
    h = pot.height
    slope = (rt - rb) / h

    # Clip each segment to the axial slab 0 <= z <= h.
    za, zb = pa[:, 2], pb[:, 2]
    dz = zb - za
    s0 = np.zeros(len(pa))
    s1 = np.ones(len(pa))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = np.where(dz != 0, (0.0 - za) / dz, np.inf)
        t_hi = np.where(dz != 0, (h - za) / dz, np.inf)
    lo = np.minimum(t_lo, t_hi)
    hi = np.maximum(t_lo, t_hi)
    parallel = dz == 0
    inside_slab = (za >= 0) & (za <= h)
    s0 = np.where(parallel, np.where(inside_slab, 0.0, 1.0),
                  np.maximum(s0, lo))
    s1 = np.where(parallel, np.where(inside_slab, 1.0, 0.0),
                  np.minimum(s1, hi))
    valid = s0 <= s1

    # q(s) = |xy(s)|^2 - r(z(s))^2, a quadratic in s; the segment enters
    # the solid iff q < 0 somewhere inside the clipped interval.
    dxy = pb[:, :2] - pa[:, :2]
    r_a = rb + slope * za
    dr = slope * dz
    qa = (dxy ** 2).sum(axis=1) - dr ** 2
    qb = 2.0 * (pa[:, :2] * dxy).sum(axis=1) - 2.0 * r_a * dr
    qc = (pa[:, :2] ** 2).sum(axis=1) - r_a ** 2

    def q(s):
        return qa * s * s + qb * s + qc

    qmin = np.minimum(q(s0), q(s1))
    with np.errstate(divide="ignore", invalid="ignore"):
        sv = np.where(qa > 0, -qb / (2.0 * np.where(qa == 0, 1.0, qa)), s0)
    at_vertex = (qa > 0) & (sv > s0) & (sv < s1)
    qmin = np.where(at_vertex, np.minimum(qmin, q(sv)), qmin)
    return valid & (qmin < 0)


def is_occluded(scene, camera, point):
    """o_v test: true iff the camera->point segment crosses the pot solid
    or the projection falls outside image bounds."""
    return bool(is_occluded_many(scene, camera,
                                 np.asarray(point, dtype=float)[None, :])[0])


def pot_occluded_many(scene, camera, points):
    """True where the camera->point segment crosses the pot solid or the
    point is behind the camera (frame bounds are not considered)."""
    pts = np.asarray(points, dtype=float)
    _, w = project_many(camera, pts)
    out = w <= 0
    if scene is not None and scene.pot_occluder is not None:
        c = camera.centre
        hit = _segment_hits_frustum(scene.pot_occluder,
                                    np.broadcast_to(c, pts.shape), pts)
        out |= hit
    return out


def is_occluded_many(scene, camera, points):
    """Vectorised occlusion test over an (n, 3) array of points."""
    pts = np.asarray(points, dtype=float)
    pix, w = project_many(camera, pts)
    out = w <= 0
    out |= (pix[:, 0] < 0) | (pix[:, 0] > camera.width - 1)
    out |= (pix[:, 1] < 0) | (pix[:, 1] > camera.height - 1)
    if scene is not None and scene.pot_occluder is not None:
        c = camera.centre
        out |= _segment_hits_frustum(scene.pot_occluder,
                                     np.broadcast_to(c, pts.shape), pts)
    return out


def scene_to_json(scene):
    data = {
        "cameras": [
            {"id": int(c.id),
             "P": [[float(x) for x in row] for row in c.projection],
             "width": int(c.width), "height": int(c.height)}
            for c in scene.cameras
        ],
        "pot_centre": [float(x) for x in scene.pot_centre],
        "up": [float(x) for x in scene.up],
    }
    if scene.pot_occluder is not None:
        pot = scene.pot_occluder
        data["pot"] = {
            "base": [float(x) for x in pot.axis_base],
            "dir": [float(x) for x in pot.axis_dir],
            "r_bottom": float(pot.frustum_radii[0]),
            "r_top": float(pot.frustum_radii[1]),
            "height": float(pot.height),
        }
    return data


def scene_from_json(data):
    cameras = [Camera(projection=np.array(c["P"], dtype=float),
                      width=c["width"], height=c["height"], id=c["id"])
               for c in data["cameras"]]
    pot = None
    if "pot" in data:
        p = data["pot"]
        pot = PotModel(axis_base=np.array(p["base"], dtype=float),
                       axis_dir=np.array(p["dir"], dtype=float),
                       frustum_radii=(p["r_bottom"], p["r_top"]),
                       height=p["height"])
    return Scene(cameras=cameras,
                 pot_centre=np.array(data["pot_centre"], dtype=float),
                 up=np.array(data["up"], dtype=float),
                 pot_occluder=pot)
