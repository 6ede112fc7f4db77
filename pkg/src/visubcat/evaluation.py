"""Box overlap and PASCAL-style precision/recall / average precision."""
import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Tuple

import numpy as np

from .imaging import BoundingBox

PROTOCOLS = ("voc2007-11pt", "all-points")


def overlap(a, b):
    """Intersection over union of two boxes (exclusive max corners)."""
    if not isinstance(a, BoundingBox):
        a = BoundingBox(*a)
    if not isinstance(b, BoundingBox):
        b = BoundingBox(*b)
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # integer coordinates stay integral here, so the single division is exact-rounded
    union = a.area + b.area - inter
    return inter / union


@dataclass
class PRCurve:
    points: List[Tuple[float, float]]   # (recall, precision) in rank order
    ap: float
    protocol: str
    n_positives: int = 0


def ap_from_flags(is_tp, n_pos, protocol="voc2007-11pt"):
    """AP of a ranked list of TP/FP flags against ``n_pos`` relevant items.

    Precisions are ratios of counts, so the AP is summed as an exact fraction
    and rounded once.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    flags = np.asarray(is_tp, dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    if n_pos <= 0 or flags.size == 0:
        rec = np.zeros(flags.size)
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        return PRCurve(list(zip(rec.tolist(), prec.tolist())), 0.0, protocol, int(n_pos))
    rec = tp / n_pos
    prec = tp / (tp + fp)
    # exact max precision over ranks i.., as (numerator, denominator)
    tps, fps = tp.tolist(), fp.tolist()
    suffix = [None] * len(tps)
    bn, bd = 0, 1
    for i in range(len(tps) - 1, -1, -1):
        a, d = tps[i], tps[i] + fps[i]
        if a * bd > bn * d:
            bn, bd = a, d
        suffix[i] = (bn, bd)
    if protocol == "voc2007-11pt":
        total = Fraction(0)
        for i in range(11):
            # first rank with recall >= i/10, compared exactly on integers
            j = int(np.searchsorted(tp * 10 >= i * n_pos, True))
            if j < len(tps):
                total += Fraction(*suffix[j])
        ap = float(total / 11)
    else:
        # each TP adds 1/n_pos recall at the interpolated precision of its rank
        per_den = {}
        for i in np.nonzero(flags)[0].tolist():
            a, d = suffix[i]
            per_den[d] = per_den.get(d, 0) + a
        total = sum((Fraction(a, d) for d, a in per_den.items()), Fraction(0))
        ap = float(total / n_pos)
    return PRCurve(list(zip(rec.tolist(), prec.tolist())), ap, protocol, int(n_pos))


def match_detections(dets, gt, category, min_overlap=0.5):
    """Label detections TP/FP/ignored in descending score order.

    ``dets`` are DetectionRecords; ties keep input order. A detection is a TP
    when its best-overlapping *unmatched* non-ignored box reaches
    ``min_overlap``; otherwise it is skipped if it hits an ignored box, else FP.
    Returns (flags, n_pos) where flags omit skipped detections.
    """
    if not 0.0 < min_overlap <= 1.0:
        raise ValueError("min_overlap must lie in (0, 1]")
    entries = gt.by_id()
    boxes, ignored, used = {}, {}, {}
    n_pos = 0
    for e in gt.entries:
        objs = [o for o in e.objects if o.category == category]
        boxes[e.id] = [o.box for o in objs]
        ignored[e.id] = [o.ignore for o in objs]
        used[e.id] = [False] * len(objs)
        n_pos += sum(not o.ignore for o in objs)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    flags = []
    for i in order:
        d = dets[i]
        if d.image_id not in entries:
            raise KeyError(f"detection refers to unknown image id {d.image_id!r}")
        best, arg, hit_ignored = -1.0, -1, False
        for j, gb in enumerate(boxes[d.image_id]):
            ov = overlap(d.box, gb)
            if ignored[d.image_id][j]:
                hit_ignored = hit_ignored or ov >= min_overlap
                continue
            if not used[d.image_id][j] and ov > best:
                best, arg = ov, j
        if arg >= 0 and best >= min_overlap:
            used[d.image_id][arg] = True
            flags.append(True)
        elif hit_ignored:
            continue
        else:
            flags.append(False)
    return flags, n_pos


def average_precision(dets, gt, category=None, min_overlap=0.5, protocol="voc2007-11pt"):
    """PR curve and AP of detections for one category of a manifest."""
    if category is None:
        if len(gt.categories) != 1:
            raise ValueError("category must be given for multi-category manifests")
        category = gt.categories[0]
    flags, n_pos = match_detections(dets, gt, category, min_overlap)
    return ap_from_flags(flags, n_pos, protocol)


def write_pr_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "recall", "precision"])
        for i, (r, p) in enumerate(curve.points, 1):
            w.writerow([i, f"{r:.6f}", f"{p:.6f}"])


def format_report(curve, category, n_dets):
    return (f"category: {category}\n"
            f"protocol: {curve.protocol}\n"
            f"detections: {n_dets}\n"
            f"positives: {curve.n_positives}\n"
            f"AP: {curve.ap:.6f}\n")
