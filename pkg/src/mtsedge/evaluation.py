"""Tolerance-matched edge metrics: best-threshold F scores, precision, IOU.

Predictions are probability maps swept over 99 thresholds. Matching between
binarized prediction and ground truth is one-to-one and greedy in increasing
pixel distance, with the allowed distance a fraction of the image diagonal.
Under the "thin" setting the binarized prediction is skeletonized first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .errors import GeometryError

THRESHOLDS = np.arange(1, 100) / 100.0


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    threshold: float = 0.0


@dataclass
class EvalReport:
    setting: str
    tolerance: float
    ods: float
    ods_threshold: float
    ois: float
    mean_precision: float
    mean_iou: float
    curve: list = field(default_factory=list)

    def to_json(self, indent=2):
        doc = {
            "setting": self.setting,
            "tolerance": self.tolerance,
            "ods": self.ods,
            "ods_threshold": self.ods_threshold,
            "ois": self.ois,
            "mean_precision": self.mean_precision,
            "mean_iou": self.mean_iou,
            "curve": self.curve,
        }
        return json.dumps(doc, indent=indent)

    def summary_tsv(self):
        head = "setting\ttolerance\tods\tods_threshold\tois\tmean_precision\tmean_iou"
        row = (f"{self.setting}\t{self.tolerance:g}\t{self.ods:.6f}"
               f"\t{self.ods_threshold:.2f}\t{self.ois:.6f}"
               f"\t{self.mean_precision:.6f}\t{self.mean_iou:.6f}")
        return head + "\n" + row


def _as_map(arr, what):
    a = np.asarray(arr)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim != 2:
        raise GeometryError(f"{what} must be a 2-d map, got shape {a.shape}")
    return a


def binarize(prob, threshold):
    """Positive iff value >= threshold."""
    p = _as_map(prob, "prediction")
    return (p >= threshold).astype(np.uint8)


def thin(binary):
    """Skeletonize to single-pixel width (iterative two-phase erosion).

    The kernel wants a clear border, so work on a padded copy.
    """
    b = _as_map(binary, "binary map")
    padded = np.zeros((b.shape[0] + 2, b.shape[1] + 2), dtype=np.uint8)
    padded[1:-1, 1:-1] = b != 0
    out = K.zhang_suen(padded)
    return np.ascontiguousarray(out[1:-1, 1:-1])


def match_offsets(height, width, tolerance):
    """Integer displacements within the tolerance radius, ordered by
    (squared distance, dy, dx) so the greedy matcher prefers closest pairs."""
    d = tolerance * math.hypot(height, width)
    r = int(math.floor(d))
    d2 = d * d
    offs = [(dy * dy + dx * dx, dy, dx)
            for dy in range(-r, r + 1)
            for dx in range(-r, r + 1)
            if dy * dy + dx * dx <= d2]
    offs.sort()
    dys = np.array([o[1] for o in offs], dtype=np.int64)
    dxs = np.array([o[2] for o in offs], dtype=np.int64)
    return dys, dxs


def match_edges(pred, gt, tolerance, threshold=0.0) -> MatchResult:
    """One-to-one greedy matching of predicted vs true edge pixels."""
    p = _as_map(pred, "prediction")
    g = _as_map(gt, "ground truth")
    if p.shape != g.shape:
        raise GeometryError(f"prediction {p.shape} vs ground truth {g.shape}")
    if tolerance <= 0:
        raise GeometryError(f"tolerance must be positive, got {tolerance}")
    pb = np.ascontiguousarray((p != 0).astype(np.uint8))
    gb = np.ascontiguousarray((g != 0).astype(np.uint8))
    dys, dxs = match_offsets(*p.shape, tolerance)
    tp = int(K.greedy_match(pb, gb, dys, dxs))
    return MatchResult(tp=tp, fp=int(pb.sum()) - tp, fn=int(gb.sum()) - tp,
                       threshold=threshold)


def f_measure(tp, fp, fn):
    """Harmonic precision/recall mean; degenerate ratios fall to 0."""
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def _prepare(pred, setting, threshold):
    b = binarize(pred, threshold)
    return thin(b) if setting == "thin" else b


def image_counts(pred, gt_binary, setting, tolerance):
    """MatchResult per sweep threshold for one image."""
    out = []
    for t in THRESHOLDS:
        b = _prepare(pred, setting, t)
        out.append(match_edges(b, gt_binary, tolerance, threshold=float(t)))
    return out


def _binarize_gt(gt, positive_threshold):
    g = _as_map(gt, "ground truth")
    if g.min() < 0 or g.max() > 1:
        raise GeometryError("ground truth values must lie in [0, 1]")
    return (g >= positive_threshold).astype(np.uint8)


def evaluate(preds, gts, *, setting="thin", tolerance=0.0075,
             positive_threshold=0.3) -> EvalReport:
    """Dataset metrics.

    preds: probability maps in [0, 1]; gts: maps in [0, 1], binarized at
    positive_threshold. The best-fixed-threshold score (ods) uses counts
    accumulated over all images; the per-image best score (ois) averages
    each image's maximum F. mean_precision / mean_iou binarize at 0.5.
    """
    if len(preds) == 0 or len(preds) != len(gts):
        raise GeometryError(
            f"need matching non-empty prediction/gt lists, got {len(preds)}/{len(gts)}")
    if setting not in ("thin", "raw"):
        raise GeometryError(f"setting must be thin|raw, got {setting!r}")
    n_thresh = len(THRESHOLDS)
    acc = np.zeros((n_thresh, 3), dtype=np.int64)
    ois_sum = 0.0
    prec_sum = 0.0
    iou_sum = 0.0
    for pred, gt in zip(preds, gts):
        gb = _binarize_gt(gt, positive_threshold)
        counts = image_counts(pred, gb, setting, tolerance)
        best = 0.0
        for i, c in enumerate(counts):
            acc[i, 0] += c.tp
            acc[i, 1] += c.fp
            acc[i, 2] += c.fn
            best = max(best, f_measure(c.tp, c.fp, c.fn))
        ois_sum += best

        c = match_edges(_prepare(pred, setting, 0.5), gb, tolerance, threshold=0.5)
        denom = c.tp + c.fp
        if denom == 0:                      # nothing predicted
            prec_sum += 1.0 if c.fn == 0 else 0.0
        else:
            prec_sum += c.tp / denom
        union = c.tp + c.fp + c.fn
        iou_sum += c.tp / union if union else 1.0

    curve = []
    ods_best, ods_t = 0.0, float(THRESHOLDS[0])
    for i, t in enumerate(THRESHOLDS):
        tp, fp, fn = (int(v) for v in acc[i])
        f = f_measure(tp, fp, fn)
        curve.append({"t": float(t), "tp": tp, "fp": fp, "fn": fn, "f": f})
        if f > ods_best:
            ods_best, ods_t = f, float(t)
    n = len(preds)
    return EvalReport(
        setting=setting, tolerance=float(tolerance),
        ods=ods_best, ods_threshold=ods_t, ois=ois_sum / n,
        mean_precision=prec_sum / n, mean_iou=iou_sum / n, curve=curve)
