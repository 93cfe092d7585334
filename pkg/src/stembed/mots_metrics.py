"""Mask-based multi-object tracking and segmentation metrics.

A frame is a pair ``(hyp, gt)``; each side maps track id -> boolean mask
(or is a list of ``(id, mask)`` pairs, which is checked for duplicates).
"""

import json
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLD = 0.5


def mask_iou(a, b):
    """Intersection over union of two boolean masks; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def _as_mask_dict(side, what):
    if isinstance(side, dict):
        return {k: np.asarray(v, dtype=bool) for k, v in side.items()}
    out = {}
    for k, m in side:
        if k in out:
            raise ValueError(f"duplicate {what} id {k} within a frame")
        out[k] = np.asarray(m, dtype=bool)
    return out


def _check_disjoint(masks, what):
    total = None
    for k, m in masks.items():
        if total is None:
            total = np.zeros(m.shape, dtype=bool)
        if np.any(total & m):
            raise ValueError(f"{what} mask {k} overlaps another {what} mask")
        total |= m


def iou_matrix(hyp, gt):
    """``{(h, g): IoU}`` over all hypothesis/ground-truth pairs."""
    hyp = _as_mask_dict(hyp, "hypothesis")
    gt = _as_mask_dict(gt, "ground-truth")
    return {(h, g): mask_iou(hm, gm) for h, hm in hyp.items() for g, gm in gt.items()}


def match_frame(hyp, gt, threshold=DEFAULT_THRESHOLD):
    """Map each hypothesis to its best-IoU ground truth, or None.

    A hypothesis is matched only when its best IoU exceeds ``threshold``.
    Ties go to the ground truth listed first. Masks on each side must be
    pairwise disjoint.
    """
    hyp = _as_mask_dict(hyp, "hypothesis")
    gt = _as_mask_dict(gt, "ground-truth")
    _check_disjoint(hyp, "hypothesis")
    _check_disjoint(gt, "ground-truth")
    psi = {}
    for h, hm in hyp.items():
        best, best_iou = None, -1.0
        for g, gm in gt.items():
            iou = mask_iou(hm, gm)
            if iou > best_iou:
                best, best_iou = g, iou
        psi[h] = best if best is not None and best_iou > threshold else None
    return psi


@dataclass
class MotsReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0
    soft_tp: float = 0.0
    gt_total: int = 0

    @property
    def motsp(self):
        return self.soft_tp / self.tp if self.tp else None

    @property
    def motsa(self):
        return (self.tp - self.fp - self.ids) / self.gt_total if self.gt_total else None

    @property
    def smotsa(self):
        return (self.soft_tp - self.fp - self.ids) / self.gt_total if self.gt_total else None

    def as_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "ids": self.ids,
                "soft_tp": self.soft_tp, "gt_total": self.gt_total,
                "motsp": self.motsp, "motsa": self.motsa, "smotsa": self.smotsa}


def accumulate(frames, threshold=DEFAULT_THRESHOLD):
    """Fold per-frame matches into a :class:`MotsReport`.

    An ID switch is counted when a matched ground-truth track is covered by
    a different hypothesis id than at its most recent previous match.
    """
    report = MotsReport()
    last_hyp = {}
    for hyp, gt in frames:
        hyp = _as_mask_dict(hyp, "hypothesis")
        gt = _as_mask_dict(gt, "ground-truth")
        psi = match_frame(hyp, gt, threshold)
        # below IoU 0.5 two hypotheses may claim one ground truth; the better one wins
        claims = {}
        for h, g in psi.items():
            if g is None:
                report.fp += 1
            else:
                claims.setdefault(g, []).append((mask_iou(hyp[h], gt[g]), h))
        for g, cands in claims.items():
            cands.sort(key=lambda c: -c[0])
            iou, h = cands[0]
            report.fp += len(cands) - 1
            report.tp += 1
            report.soft_tp += iou
            if g in last_hyp and last_hyp[g] != h:
                report.ids += 1
            last_hyp[g] = h
        report.gt_total += len(gt)
        report.fn += len(gt) - len(claims)
    return report


def masks_from_id_map(id_map):
    """``{id: mask}`` for every non-zero id of a label map."""
    id_map = np.asarray(id_map)
    return {int(k): id_map == k for k in np.unique(id_map) if k != 0}


def evaluate_id_maps(pred_maps, gt_maps, threshold=DEFAULT_THRESHOLD):
    """Metrics for aligned sequences of predicted and ground-truth label maps."""
    if len(pred_maps) != len(gt_maps):
        raise ValueError(f"frame counts differ: {len(pred_maps)} predicted, {len(gt_maps)} ground truth")
    frames = [(masks_from_id_map(p), masks_from_id_map(g)) for p, g in zip(pred_maps, gt_maps)]
    return accumulate(frames, threshold)


def _fmt(v):
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if not math.isfinite(v):
        return "null"
    return f"{v:.6f}"


def report_json(report):
    """Stable JSON: sorted keys, reals with six decimals, undefined ratios as null."""
    d = report.as_dict()
    return "{" + ",".join(f'"{k}":{_fmt(d[k])}' for k in sorted(d)) + "}"


def report_from_json(text):
    d = json.loads(text)
    return MotsReport(tp=d["tp"], fp=d["fp"], fn=d["fn"], ids=d["ids"],
                      soft_tp=d["soft_tp"], gt_total=d["gt_total"])
