"""Scoring a fit against ground truth: segmentation mIoU under optimal
one-to-one part matching, sign-agnostic axis angles, point-to-line pivot
distances, sign-aligned motion errors, and joint-type accuracy.

Conventions: 1 scene unit = 1 m, so pivot and prismatic-state errors are
reported in cm; angles in degrees. Part labels are pooled over all frames
before matching, and the matching maximizes total IoU.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kinematics import PRISMATIC, REVOLUTE


def _pool(labels) -> np.ndarray:
    return np.concatenate([np.asarray(f).reshape(-1) for f in labels])


def iou_matrix(pred_labels, gt_labels, exclude_gt=()):
    """Pooled per-(gt, pred) IoU plus the id vectors it is indexed by.

    Negative prediction labels mean "no part" and never intersect anything.
    """
    pred = _pool(pred_labels)
    gt = _pool(gt_labels)
    if pred.shape != gt.shape:
        raise ValueError(f"label shape mismatch: {pred.shape} vs {gt.shape}")
    gt_ids = np.array([g for g in np.unique(gt) if g not in set(exclude_gt)])
    pred_ids = np.unique(pred[pred >= 0])
    iou = np.zeros((len(gt_ids), len(pred_ids)))
    for i, g in enumerate(gt_ids):
        in_g = gt == g
        for j, k in enumerate(pred_ids):
            in_k = pred == k
            union = np.count_nonzero(in_g | in_k)
            if union:
                iou[i, j] = np.count_nonzero(in_g & in_k) / union
    return iou, gt_ids, pred_ids


def match_parts(pred_labels, gt_labels, exclude_gt=()):
    """One-to-one matching maximizing total IoU.

    Returns (pairs, iou, gt_ids, pred_ids) where pairs maps gt id -> pred id
    for the matched rows only.
    """
    iou, gt_ids, pred_ids = iou_matrix(pred_labels, gt_labels, exclude_gt)
    pairs = {}
    if iou.size:
        rows, cols = linear_sum_assignment(-iou)
        pairs = {int(gt_ids[r]): int(pred_ids[c]) for r, c in zip(rows, cols)}
    return pairs, iou, gt_ids, pred_ids


def miou(pred_labels, gt_labels, exclude_gt=()) -> float:
    """Mean IoU over ground-truth parts; unmatched ones count as zero."""
    iou, gt_ids, _ = iou_matrix(pred_labels, gt_labels, exclude_gt)
    if len(gt_ids) == 0:
        raise ValueError("no ground-truth parts to score")
    total = 0.0
    if iou.size:
        rows, cols = linear_sum_assignment(-iou)
        total = float(iou[rows, cols].sum())
    return total / len(gt_ids)


def axis_error(pred_axis, gt_axis) -> float:
    """Sign-agnostic angle between two axes, in degrees."""
    a = np.asarray(pred_axis, dtype=np.float64)
    b = np.asarray(gt_axis, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("zero-length axis")
    c = np.clip(abs(float(np.dot(a, b)) / (na * nb)), 0.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def pivot_error(pred_axis, pred_pivot, gt_pivot) -> float:
    """Distance from the GT pivot to the predicted axis line, in cm."""
    a = np.asarray(pred_axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < 1e-12:
        raise ValueError("zero-length axis")
    a = a / n
    d = np.asarray(gt_pivot, dtype=np.float64) - np.asarray(pred_pivot, dtype=np.float64)
    perp = d - np.dot(d, a) * a
    return float(np.linalg.norm(perp)) * 100.0


def state_error(pred_theta, gt_theta, joint_type: str) -> float:
    """Sign-aligned mean absolute motion error: degrees for revolute joints,
    cm for prismatic ones. The axis sign ambiguity makes theta sign-ambiguous,
    so the better of the two signs is scored."""
    p = np.asarray(pred_theta, dtype=np.float64)
    g = np.asarray(gt_theta, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"state length mismatch: {p.shape} vs {g.shape}")
    err = min(float(np.mean(np.abs(p - g))), float(np.mean(np.abs(p + g))))
    if joint_type == REVOLUTE:
        return float(np.degrees(err))
    if joint_type == PRISMATIC:
        return err * 100.0
    raise ValueError(f"unknown joint type {joint_type!r}")


def type_accuracy(pairs) -> float:
    """Percentage of (predicted, ground-truth) joint-type pairs that agree."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no matched parts to score")
    hits = sum(1 for pred, gt in pairs if pred == gt)
    return 100.0 * hits / len(pairs)


def evaluate(result, scene, include_static: bool = True) -> dict:
    """Full scorecard of a FitResult against a SceneSequence.

    Matching is computed once from the pooled labels (static ground truth
    included unless disabled) and reused for every joint metric. Joint rows
    for unmatched ground-truth parts carry None metrics.
    """
    dynamic_ids = {j.part_label for j in scene.joints}
    exclude = () if include_static else tuple(
        set(int(g) for g in np.unique(_pool(scene.labels))) - dynamic_ids)
    pairs, _, _, _ = match_parts(result.labels, scene.labels, exclude)

    joints = []
    type_pairs = []
    for j in scene.joints:
        k = pairs.get(int(j.part_label))
        row = {"gt_label": int(j.part_label), "gt_type": j.joint_type,
               "pred_part": k, "is_static": None, "type_correct": None,
               "axis_error_deg": None, "pivot_error_cm": None,
               "state_error": None}
        if k is not None:
            part = result.parts[k]
            row["is_static"] = part.is_static
            row["type_correct"] = bool(not part.is_static
                                       and part.joint_type == j.joint_type)
            row["axis_error_deg"] = axis_error(part.axis, j.axis)
            if j.joint_type == REVOLUTE and part.pivot is not None:
                row["pivot_error_cm"] = pivot_error(part.axis, part.pivot,
                                                    j.pivot)
            if part.theta.shape == j.theta.shape:
                row["state_error"] = state_error(part.theta, j.theta,
                                                 j.joint_type)
            type_pairs.append((part.joint_type if not part.is_static else "static",
                               j.joint_type))
        joints.append(row)

    matched_dynamic = {k for g, k in pairs.items() if g in dynamic_ids}
    spurious = [k for k, part in enumerate(result.parts)
                if not part.is_static and k not in matched_dynamic]
    return {
        "miou": miou(result.labels, scene.labels, exclude),
        "joints": joints,
        "type_accuracy": type_accuracy(type_pairs) if type_pairs else None,
        "num_pred_parts": len(result.parts),
        "num_pred_dynamic": sum(1 for p in result.parts if not p.is_static),
        "spurious_dynamic": spurious,
    }
