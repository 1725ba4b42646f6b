"""Binary silhouette handling: thinning to 1-px skeletons and exact
Euclidean distance transforms.

Foreground is 8-connected, background 4-connected. Arrays are (height,
width), row-major, bool; True = plant.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage


EIGHT = np.ones((3, 3), dtype=int)


@dataclass
class Mask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool


@dataclass
class SkeletonImage:
    width: int
    height: int
    bits: np.ndarray
    source: int = 0  # view index


@dataclass
class DistanceField:
    width: int
    height: int
    values: np.ndarray  # (height, width) float, px to nearest feature

    def sample_bilinear(self, x, y, cap=None):
        """Bilinear read at (x, y) pixel coordinates; clamps to the image
        border and optionally caps infinities."""
        v = self.values
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.width - 1.0)
        y = np.clip(np.asarray(y, dtype=float), 0.0, self.height - 1.0)
        x0 = np.floor(x).astype(int)
        y0 = np.floor(y).astype(int)
        x1 = np.minimum(x0 + 1, self.width - 1)
        y1 = np.minimum(y0 + 1, self.height - 1)
        fx = x - x0
        fy = y - y0
        c00, c01 = v[y0, x0], v[y0, x1]
        c10, c11 = v[y1, x0], v[y1, x1]
        if cap is not None:
            # Capping the corner reads (not the whole field) keeps the
            # interpolation finite near the +inf empty-feature sentinel.
            c00 = np.minimum(c00, cap)
            c01 = np.minimum(c01, cap)
            c10 = np.minimum(c10, cap)
            c11 = np.minimum(c11, cap)
        top = c00 * (1 - fx) + c01 * fx
        bot = c10 * (1 - fx) + c11 * fx
        return top * (1 - fy) + bot * fy


def load_mask(path, threshold=128):
    img = np.asarray(Image.open(path).convert("L"))
    bits = img >= threshold
    return Mask(width=bits.shape[1], height=bits.shape[0], bits=bits)


def save_mask(mask_or_skel, path):
    bits = mask_or_skel.bits
    Image.fromarray((bits.astype(np.uint8)) * 255, mode="L").save(path)


def _neighbour_stack(img):
    """8-neighbour planes of a padded image in Zhang-Suen order
    P2..P9 (N, NE, E, SE, S, SW, W, NW)."""
    p = np.pad(img, 1)
    return np.stack([
        p[:-2, 1:-1], p[:-2, 2:], p[1:-1, 2:], p[2:, 2:],
        p[2:, 1:-1], p[2:, :-2], p[1:-1, :-2], p[:-2, :-2],
    ]).astype(np.uint8)


def _candidates(img, first_pass):
    n = _neighbour_stack(img)
    count = n.sum(axis=0)
    rolled = np.roll(n, -1, axis=0)
    transitions = ((n == 0) & (rolled == 1)).sum(axis=0)
    p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
    if first_pass:
        cond = ((p2 & p4 & p6) == 0) & ((p4 & p6 & p8) == 0)
    else:
        cond = ((p2 & p4 & p8) == 0) & ((p2 & p6 & p8) == 0)
    return img & (count >= 2) & (count <= 6) & (transitions == 1) & cond


def _deletable(img, y, x, first_pass):
    h, w = img.shape
    nb = []
    for dy, dx in ((-1, 0), (-1, 1), (0, 1), (1, 1),
                   (1, 0), (1, -1), (0, -1), (-1, -1)):
        yy, xx = y + dy, x + dx
        nb.append(1 if 0 <= yy < h and 0 <= xx < w and img[yy, xx] else 0)
    count = sum(nb)
    if not (2 <= count <= 6):
        return False
    trans = sum(nb[i] == 0 and nb[(i + 1) % 8] == 1 for i in range(8))
    if trans != 1:
        return False
    p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
    if first_pass:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


def thin(mask):
    """Zhang-Suen two-subiteration thinning.

    Candidates are marked in parallel per subiteration, then deleted
    sequentially with the deletion criterion re-checked against the
    current image; this keeps every deletion connectivity-safe, so the
    8-connected component count is preserved and the result is
    idempotent under re-thinning.
    """
    img = mask.bits.astype(bool).copy()
    changed = True
    while changed:
        changed = False
        for first_pass in (True, False):
            cand = _candidates(img, first_pass)
            for y, x in np.argwhere(cand):
                if _deletable(img, y, x, first_pass):
                    img[y, x] = False
                    changed = True
    return SkeletonImage(width=mask.width, height=mask.height, bits=img,
                         source=getattr(mask, "source", 0))


def distance_transform(feature):
    """Exact Euclidean distance to the nearest feature pixel.

    An empty feature set yields +inf everywhere.
    """
    bits = feature.bits
    if not bits.any():
        values = np.full(bits.shape, np.inf)
    else:
        values = ndimage.distance_transform_edt(~bits)
    return DistanceField(width=feature.width, height=feature.height,
                         values=values)


def count_components(bits):
    """Number of 8-connected foreground components."""
    _, n = ndimage.label(bits, structure=EIGHT)
    return n
