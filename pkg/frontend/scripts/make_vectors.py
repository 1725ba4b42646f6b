"""Generates the JSON test vectors for the annotator.

Builds a synthetic dataset with the reconstruction CLI, exports its
session file, and records a known plant's leaf axes with their exact
projections in two views, so the TypeScript tests (and the Python
round-trip test) can cross-check the client-side epipolar math against
the pipeline's geometry.

Run from the frontend directory:
    python3 scripts/make_vectors.py
"""

import json
import os
import tempfile

import numpy as np

from plantrecon import cli, geometry, synth

SEED = 11
LEAVES = 3
VIEW_A, VIEW_B = 0, 1
POINTS_PER_LEAF = 10
OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "vectors")


def main():
    plant = synth.generate_plant(SEED, LEAVES)
    rc = synth.RenderConfig()
    scene = synth.make_rig(rc)

    with tempfile.TemporaryDirectory() as tmp:
        synth.write_dataset(tmp, plant, scene, rc)
        session = cli.export_session(tmp, os.path.join(tmp, "session.json"))
    session.pop("database", None)
    session["masks"] = {}  # tests are geometry-only

    cam_a = scene.camera_by_id(VIEW_A)
    cam_b = scene.camera_by_id(VIEW_B)
    leaves = []
    for poly in plant.leaves:
        idx = np.linspace(0, len(poly) - 1, POINTS_PER_LEAF).round()
        pts = poly[idx.astype(int)]  # tip-first
        leaves.append({
            "truth": [[float(v) for v in p] for p in pts],
            "clicks_a": [[float(v) for v in geometry.project(cam_a, p)]
                         for p in pts],
            "clicks_b": [[float(v) for v in geometry.project(cam_b, p)]
                         for p in pts],
            "tip": [float(v) for v in poly[0]],
        })

    rng = np.random.default_rng(0)
    checks = []
    for _ in range(25):
        x = rng.uniform([-200, -200, 20], [200, 200, 350])
        checks.append({
            "point": [float(v) for v in x],
            "projections": {str(c.id): [float(v)
                                        for v in geometry.project(c, x)]
                            for c in scene.cameras},
        })

    os.makedirs(OUT_DIR, exist_ok=True)
    with open(os.path.join(OUT_DIR, "session.json"), "w") as f:
        json.dump(session, f, indent=1)
    with open(os.path.join(OUT_DIR, "annotation.json"), "w") as f:
        json.dump({"seed": SEED, "leaf_count": LEAVES,
                   "view_a": VIEW_A, "view_b": VIEW_B,
                   "leaves": leaves, "checks": checks}, f, indent=1)
    print(f"wrote vectors to {os.path.abspath(OUT_DIR)}")


if __name__ == "__main__":
    main()
