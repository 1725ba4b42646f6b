"""Leaf-length extraction from a plant model and comparison reports
against manual or ground-truth measurements."""

import csv
import io
from dataclasses import dataclass

import numpy as np


@dataclass
class Measurement:
    leaf_id: int
    length_mm: float            # tip to stem-divergence point
    full_curve_length_mm: float  # tip to base

    def __post_init__(self):
        if not 0 < self.length_mm <= self.full_curve_length_mm + 1e-9:
            raise ValueError("length must be in (0, full length]")


@dataclass
class ReportRow:
    leaf_id: int
    manual_mm: float
    estimated_mm: float
    relative_pct: float


@dataclass
class Report:
    rows: list
    missing: int                 # reference leaves with no matched estimate
    spurious: int                # estimated leaves with no reference match
    mean_abs_diff_mm: float
    mean_relative_pct: float


def _dense_samples(curve, step_mm=2.0):
    arcs = np.linspace(0.0, curve.arc_length(),
                       max(2, int(np.ceil(curve.arc_length() / step_mm)) + 1))
    return arcs, curve.evaluate(curve.param_at_arc(arcs))


def leaf_length(leaf, model, divergence_mm=5.0):
    """Length from the tip to the point where this leaf diverges from
    every other leaf in the model (walking from the base towards the
    tip); with no other leaves the divergence point is the base."""
    others = [sel.curve for sel in model.leaves if sel.curve is not leaf]
    arcs, pts = _dense_samples(leaf)
    full = leaf.arc_length()
    leaf_id = next((i for i, sel in enumerate(model.leaves)
                    if sel.curve is leaf), -1)
    if not others:
        return Measurement(leaf_id=leaf_id, length_mm=full,
                           full_curve_length_mm=full)
    other_pts = np.concatenate([_dense_samples(c)[1] for c in others])
    # Walk from the base end (largest arc-from-tip) towards the tip; the
    # divergence point is the first sample farther than divergence_mm
    # from every other leaf. Length is measured tip -> divergence point.
    length = None
    for i in range(len(arcs) - 1, -1, -1):
        d = np.linalg.norm(other_pts - pts[i], axis=1).min()
        if d > divergence_mm:
            length = arcs[i]
            break
    if length is None or length <= 0.0:
        # Fully overlapped by another leaf; report one sample step.
        length = arcs[1] if len(arcs) > 1 else full
    return Measurement(leaf_id=leaf_id, length_mm=float(length),
                       full_curve_length_mm=full)


def match_leaves(model, reference_tips, max_dist_mm=30.0):
    """Mutual-nearest-neighbour matching of model leaf tips to reference
    tips; returns list of (model index, reference index)."""
    if not model.leaves or len(reference_tips) == 0:
        return []
    est_tips = np.array([sel.curve.evaluate(0.0) for sel in model.leaves])
    ref = np.asarray(reference_tips, dtype=float)
    d = np.linalg.norm(est_tips[:, None, :] - ref[None, :, :], axis=2)
    pairs = []
    for i in range(len(est_tips)):
        j = int(np.argmin(d[i]))
        if d[i, j] <= max_dist_mm and int(np.argmin(d[:, j])) == i:
            pairs.append((i, j))
    return pairs


def report(measurements, reference_lengths, matches=None):
    """Relative-error report: rel% = 100 |manual - estimated| / manual.

    measurements: list of Measurement indexed like the model's leaves.
    reference_lengths: manual lengths, mm. matches: optional list of
    (measurement index, reference index); identity by default.
    """
    if matches is None:
        matches = [(i, i) for i in range(min(len(measurements),
                                             len(reference_lengths)))]
    rows = []
    for mi, ri in matches:
        manual = float(reference_lengths[ri])
        est = float(measurements[mi].length_mm)
        rows.append(ReportRow(leaf_id=mi, manual_mm=manual, estimated_mm=est,
                              relative_pct=100.0 * abs(manual - est) / manual))
    matched_refs = {ri for _, ri in matches}
    matched_est = {mi for mi, _ in matches}
    missing = len(reference_lengths) - len(matched_refs)
    spurious = len(measurements) - len(matched_est)
    if rows:
        mean_abs = float(np.mean([abs(r.manual_mm - r.estimated_mm)
                                  for r in rows]))
        mean_rel = float(np.mean([r.relative_pct for r in rows]))
    else:
        mean_abs = mean_rel = float("nan")
    return Report(rows=rows, missing=missing, spurious=spurious,
                  mean_abs_diff_mm=mean_abs, mean_relative_pct=mean_rel)


def report_to_csv(rep):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["leaf", "manual_mm", "estimated_mm", "relative_pct"])
    for row in rep.rows:
        writer.writerow([row.leaf_id, f"{row.manual_mm:.2f}",
                         f"{row.estimated_mm:.2f}",
                         f"{row.relative_pct:.2f}"])
    return buf.getvalue()


def report_to_text(rep):
    lines = [f"{'leaf':>4} {'manual':>10} {'estimated':>10} {'rel %':>8}"]
    for row in rep.rows:
        lines.append(f"{row.leaf_id:>4} {row.manual_mm:>10.2f} "
                     f"{row.estimated_mm:>10.2f} {row.relative_pct:>8.2f}")
    lines.append(f"matched {len(rep.rows)}, missing {rep.missing}, "
                 f"spurious {rep.spurious}")
    if rep.rows:
        lines.append(f"mean |diff| {rep.mean_abs_diff_mm:.2f} mm, "
                     f"mean relative {rep.mean_relative_pct:.2f} %")
    return "\n".join(lines)
