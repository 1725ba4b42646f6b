"""Command-line pipeline: dataset I/O, stage orchestration and the
session export consumed by the annotation UI."""

import argparse
import concurrent.futures
import glob
import json
import logging
import os
import re
import sys

import numpy as np

from . import assemble, geometry, measure, refine, silhouette, skelgraph, synth
from .config import PipelineConfig
from .leafmodel import LeafDatabase
from .silhouette import Mask, load_mask, save_mask

log = logging.getLogger("plantrecon")

EXIT_MISSING_INPUT = 2
EXIT_ZERO_TIPS = 3
EXIT_EMPTY_DATABASE = 4


class PipelineError(RuntimeError):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _dump_json(data, path):
    with open(path, "w") as f:
        json.dump(data, f, indent=1, sort_keys=True)
        f.write("\n")


def load_dataset(dataset_dir, mask_threshold=128):
    cam_path = os.path.join(dataset_dir, "cameras.json")
    if not os.path.exists(cam_path):
        raise PipelineError(f"missing {cam_path}", EXIT_MISSING_INPUT)
    with open(cam_path) as f:
        scene = geometry.scene_from_json(json.load(f))
    masks = {}
    for cam in scene.cameras:
        path = os.path.join(dataset_dir, f"mask_{cam.id}.png")
        if not os.path.exists(path):
            raise PipelineError(f"missing mask {path}", EXIT_MISSING_INPUT)
        masks[cam.id] = load_mask(path, threshold=mask_threshold)
    return scene, masks


def _load_database(dataset_dir, config):
    path = config.database or os.path.join(dataset_dir, "database.json")
    if not os.path.exists(path):
        raise PipelineError(f"missing leaf database {path}",
                            EXIT_EMPTY_DATABASE)
    db = LeafDatabase.load(path)
    if not db.records:
        raise PipelineError(f"leaf database {path} is empty",
                            EXIT_EMPTY_DATABASE)
    if config.augment_count > 0:
        db.augment_all(count=config.augment_count, seed=config.augment_seed)
    return db


def run_pipeline(dataset_dir, config, out_dir, seed=0, threads=1):
    """silhouette -> skeleton graph -> placement -> refinement ->
    assembly -> measurement. Writes per-stage artifacts under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    scene, masks = load_dataset(dataset_dir, config.mask_threshold)
    db = _load_database(dataset_dir, config)

    skeletons = {}
    skeleton_fields = {}
    mask_fields = {}
    for view, mask in masks.items():
        skel = silhouette.thin(mask)
        skel.source = view
        skeletons[view] = skel
        save_mask(skel, os.path.join(out_dir, f"skeleton_{view}.png"))
        skeleton_fields[view] = silhouette.distance_transform(skel)
        mask_fields[view] = silhouette.distance_transform(mask)

    graphs = {}
    candidates_2d = {}
    for view, skel in skeletons.items():
        if not skel.bits.any():
            continue
        graph = skelgraph.build_graph(skel)
        graphs[view] = graph
        candidates_2d[view] = skelgraph.detect_tips_2d(
            graph, radius=config.tip_radius_px)

    tips = skelgraph.match_tips(candidates_2d, scene.cameras,
                                epipolar_px=config.epipolar_px,
                                reproj_px=config.reproj_px,
                                merge_mm=config.merge_mm) if graphs else []
    if not tips:
        raise PipelineError("zero tips found", EXIT_ZERO_TIPS)
    base, tips = skelgraph.select_base_point(tips, scene.pot_centre)
    tips = skelgraph.filter_tips(tips, base, graphs, scene, mask_fields,
                                 novelty_px=config.novelty_px,
                                 silhouette_px=config.silhouette_px)
    if not tips:
        raise PipelineError("zero tips survive filtering", EXIT_ZERO_TIPS)
    _dump_json({"base": [float(x) for x in base.position],
                "tips": [{"p": [float(x) for x in t.position],
                          "rms": float(t.reprojection_rms),
                          "supports": [[int(v), float(p[0]), float(p[1])]
                                       for v, p in t.supports]}
                         for t in tips]},
               os.path.join(out_dir, "tips.json"))

    def build_candidates(tip):
        ranked = refine.rank_candidates(
            db, tip, base, scene.up, scene, skeleton_fields,
            top_k=config.top_k, sample_spacing=config.sample_spacing_mm)
        refined = []
        for cand in ranked:
            obj = refine.LeafObjective(scene, skeleton_fields, cand.curve,
                                       alpha=config.alpha,
                                       sample_spacing=config.sample_spacing_mm)
            out = refine.refine_leaf(cand.curve, obj,
                                     max_iters=config.lm_max_iters)
            refined.append((out, refine.score(out, obj).value))
        refined.sort(key=lambda cs: cs[1])
        return assemble.select_candidate_set(
            tip, refined, max_count=config.candidates_per_tip,
            min_mean_dist=config.min_candidate_dist_mm)

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as pool:
            candidate_sets = list(pool.map(build_candidates, tips))
    else:
        candidate_sets = [build_candidates(t) for t in tips]
    _dump_json({"tips": [{"tip": [float(x) for x in cs.tip.position],
                          "scores": [float(s) for _, s in cs.leaves]}
                         for cs in candidate_sets]},
               os.path.join(out_dir, "candidates.json"))

    params = assemble.QualityParams(tau=config.tau, beta=config.beta,
                                    gamma=config.gamma,
                                    stroke_width=config.stroke_width,
                                    coverage_width=config.coverage_width)
    model = assemble.greedy_select(candidate_sets, runs=config.runs,
                                   seed=seed, scene=scene,
                                   skeletons=skeletons, params=params)
    _dump_json(assemble.model_to_json(model),
               os.path.join(out_dir, "model.json"))

    rep = None
    truth_path = os.path.join(dataset_dir, "truth.json")
    if os.path.exists(truth_path) and model.leaves:
        with open(truth_path) as f:
            truth = json.load(f)
        ref_tips = [leaf["points"][0] for leaf in truth["leaves"]]
        ref_lengths = [leaf["length_mm"] for leaf in truth["leaves"]]
        measurements = [measure.leaf_length(sel.curve, model,
                                            divergence_mm=config.divergence_mm)
                        for sel in model.leaves]
        matches = measure.match_leaves(model, ref_tips)
        rep = measure.report(measurements, ref_lengths, matches)
        with open(os.path.join(out_dir, "report.csv"), "w") as f:
            f.write(measure.report_to_csv(rep))
        with open(os.path.join(out_dir, "report.txt"), "w") as f:
            f.write(measure.report_to_text(rep) + "\n")
    return model, rep


def export_session(dataset_dir, out_path):
    scene, _ = load_dataset(dataset_dir)
    if len(scene.cameras) < 2:
        raise PipelineError("need >= 2 cameras", EXIT_MISSING_INPUT)
    pairs = []
    cams = scene.cameras
    for i in range(len(cams)):
        for j in range(i + 1, len(cams)):
            f = geometry.fundamental_matrix(cams[i], cams[j])
            pairs.append({"a": int(cams[i].id), "b": int(cams[j].id),
                          "F": [[float(x) for x in row] for row in f]})
    session = {
        "calibration": geometry.scene_to_json(scene),
        "masks": {str(c.id): f"mask_{c.id}.png" for c in cams},
        "fundamental": pairs,
    }
    db_path = os.path.join(dataset_dir, "database.json")
    if os.path.exists(db_path):
        session["database"] = "database.json"
    _dump_json(session, out_path)
    return session


def _cmd_synth(args, config):
    plant = synth.generate_plant(args.seed, args.leaves)
    rc = synth.RenderConfig(image_size=args.image_size,
                            camera_count=args.views)
    scene = synth.make_rig(rc)
    synth.write_dataset(args.out, plant, scene, rc)
    if args.db_plants > 0:
        plants = [plant] + [synth.generate_plant(args.seed + 1 + i,
                                                 args.leaves)
                            for i in range(args.db_plants)]
        db = synth.build_synthetic_database(plants, holdout=plant.seed,
                                            augment_count=0)
        db.save(os.path.join(args.out, "database.json"))
    print(f"dataset written to {args.out}")
    return 0


def _cmd_skeletonize(args, config):
    os.makedirs(args.out, exist_ok=True)
    paths = sorted(glob.glob(os.path.join(args.dataset, "mask_*.png")))
    if not paths:
        raise PipelineError("no masks found", EXIT_MISSING_INPUT)
    for path in paths:
        view = int(re.search(r"mask_(\d+)", path).group(1))
        mask = load_mask(path, threshold=config.mask_threshold)
        skel = silhouette.thin(mask)
        skel.source = view
        save_mask(skel, os.path.join(args.out, f"skeleton_{view}.png"))
    print(f"skeletons written to {args.out}")
    return 0


def _cmd_tips(args, config):
    os.makedirs(args.out, exist_ok=True)
    scene, masks = load_dataset(args.dataset, config.mask_threshold)
    graphs = {}
    cands = {}
    mask_fields = {}
    for view, mask in masks.items():
        skel = silhouette.thin(mask)
        skel.source = view
        if not skel.bits.any():
            continue
        graphs[view] = skelgraph.build_graph(skel)
        cands[view] = skelgraph.detect_tips_2d(graphs[view],
                                               radius=config.tip_radius_px)
        mask_fields[view] = silhouette.distance_transform(mask)
    tips = skelgraph.match_tips(cands, scene.cameras,
                                epipolar_px=config.epipolar_px,
                                reproj_px=config.reproj_px,
                                merge_mm=config.merge_mm)
    if not tips:
        raise PipelineError("zero tips found", EXIT_ZERO_TIPS)
    base, tips = skelgraph.select_base_point(tips, scene.pot_centre)
    tips = skelgraph.filter_tips(tips, base, graphs, scene, mask_fields,
                                 novelty_px=config.novelty_px,
                                 silhouette_px=config.silhouette_px)
    _dump_json({"base": [float(x) for x in base.position],
                "tips": [{"p": [float(x) for x in t.position],
                          "rms": float(t.reprojection_rms),
                          "supports": [[int(v), float(p[0]), float(p[1])]
                                       for v, p in t.supports]}
                         for t in tips]},
               os.path.join(args.out, "tips.json"))
    print(f"{len(tips)} tips written to {args.out}/tips.json")
    return 0


def _cmd_reconstruct(args, config):
    if args.runs is not None:
        config.runs = args.runs
    model, rep = run_pipeline(args.dataset, config, args.out,
                              seed=args.seed, threads=args.threads)
    print(f"model with {len(model.leaves)} leaves, q = {model.quality:.1f}")
    if rep is not None:
        print(measure.report_to_text(rep))
    return 0


def _cmd_measure(args, config):
    with open(os.path.join(args.out, "model.json")) as f:
        model = assemble.model_from_json(json.load(f))
    with open(args.truth) as f:
        truth = json.load(f)
    ref_tips = [leaf["points"][0] for leaf in truth["leaves"]]
    ref_lengths = [leaf["length_mm"] for leaf in truth["leaves"]]
    measurements = [measure.leaf_length(sel.curve, model,
                                        divergence_mm=config.divergence_mm)
                    for sel in model.leaves]
    matches = measure.match_leaves(model, ref_tips)
    rep = measure.report(measurements, ref_lengths, matches)
    with open(os.path.join(args.out, "report.csv"), "w") as f:
        f.write(measure.report_to_csv(rep))
    print(measure.report_to_text(rep))
    return 0


def _cmd_export_session(args, config):
    export_session(args.dataset, os.path.join(args.out, "session.json"))
    print(f"session written to {args.out}/session.json")
    return 0


def _cmd_calibrate_refine(args, config):
    scene, _ = load_dataset(args.dataset, config.mask_threshold)
    with open(args.correspondences) as f:
        data = json.load(f)
    corrs = [geometry.Correspondence(world=np.array(c["world"], dtype=float),
                                     pixel=np.array(c["pixel"], dtype=float),
                                     view=c["view"])
             for c in data["correspondences"]]
    priors = None
    if "priors" in data:
        priors = {int(k): (np.array(v["values"], dtype=float),
                           np.array(v["weights"], dtype=float))
                  for k, v in data["priors"].items()}
    refined = geometry.refine_calibration(scene.cameras, corrs, priors)
    scene.cameras = refined
    os.makedirs(args.out, exist_ok=True)
    _dump_json(geometry.scene_to_json(scene),
               os.path.join(args.out, "cameras_refined.json"))
    print(f"refined calibration written to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plantrecon",
        description="Per-leaf 3D structure recovery of grass-like plants "
                    "from calibrated binary silhouettes. Defaults are "
                    "desk-scale (runs=1000); raise --runs for large "
                    "searches.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--runs", type=int, default=None,
                        help="greedy search runs (overrides config)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--mask-threshold", type=int, default=None,
                        metavar="0-255")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--leaves", type=int, default=4)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--image-size", type=int, default=1024)
    p.add_argument("--db-plants", type=int, default=9,
                   help="extra plants for the leaf database (0 = none)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("skeletonize", help="thin masks to skeletons")
    p.add_argument("dataset")
    p.set_defaults(func=_cmd_skeletonize)

    p = sub.add_parser("tips", help="detect and triangulate leaf tips")
    p.add_argument("dataset")
    p.set_defaults(func=_cmd_tips)

    p = sub.add_parser("reconstruct", help="run the full pipeline")
    p.add_argument("dataset")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("measure", help="report leaf lengths vs truth")
    p.add_argument("--truth", required=True)
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("export-session",
                       help="write the annotation-UI session file")
    p.add_argument("dataset")
    p.set_defaults(func=_cmd_export_session)

    p = sub.add_parser("calibrate-refine",
                       help="refine cameras from correspondences")
    p.add_argument("dataset")
    p.add_argument("--correspondences", required=True)
    p.set_defaults(func=_cmd_calibrate_refine)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    config = PipelineConfig.from_file(args.config) if args.config \
        else PipelineConfig()
    if args.mask_threshold is not None:
        config.mask_threshold = args.mask_threshold
        config.validate()
    try:
        return args.func(args, config)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
