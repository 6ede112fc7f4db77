from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from visubcat.dataset import DatasetManifest, GroundTruth, ManifestEntry
from visubcat.detection import DetectionRecord
from visubcat.evaluation import (ap_from_flags, average_precision, format_report, match_detections,
                                 overlap, write_pr_csv)
from visubcat.imaging import BoundingBox


def raster_overlap(a, b):
    """Pixel-count IoU on a bitmap covering both boxes."""
    x0, y0 = min(a[0], b[0]), min(a[1], b[1])
    x1, y1 = max(a[2], b[2]), max(a[3], b[3])
    ma = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    mb = np.zeros_like(ma)
    ma[a[1] - y0:a[3] - y0, a[0] - x0:a[2] - x0] = True
    mb[b[1] - y0:b[3] - y0, b[0] - x0:b[2] - x0] = True
    return (ma & mb).sum() / (ma | mb).sum()


def random_box(rng, size=60):
    x0, y0 = rng.integers(0, size, 2)
    w, h = rng.integers(1, size // 2, 2)
    return (int(x0), int(y0), int(x0 + w), int(y0 + h))


def test_overlap_examples():
    assert overlap((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert overlap((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
    assert overlap((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0
    assert overlap((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)


def test_overlap_rejects_degenerate_box():
    with pytest.raises(ValueError):
        overlap((0, 0, 0, 10), (0, 0, 5, 5))


def test_overlap_matches_raster(rng):
    for _ in range(2000):
        a, b = random_box(rng), random_box(rng)
        assert abs(overlap(a, b) - raster_overlap(a, b)) <= 1e-12


@given(st.tuples(*[st.integers(0, 40)] * 4), st.tuples(*[st.integers(0, 40)] * 4))
def test_overlap_symmetric_and_bounded(p, q):
    a = (p[0], p[1], p[0] + p[2] + 1, p[1] + p[3] + 1)
    b = (q[0], q[1], q[0] + q[2] + 1, q[1] + q[3] + 1)
    v = overlap(a, b)
    assert v == overlap(b, a)
    assert 0.0 <= v <= 1.0


# ------------------------------------------------------------------ AP oracle


def brute_force_ap(dets, gt_boxes, min_overlap=0.5):
    """Enumerate the PR curve with exact fractions; both protocols.

    ``dets``: list of (image_id, score, box) in file order; ``gt_boxes``:
    {image_id: [box, ...]}.
    """
    n_pos = sum(len(v) for v in gt_boxes.values())
    ranked = sorted(enumerate(dets), key=lambda t: (-t[1][1], t[0]))
    taken = {k: [False] * len(v) for k, v in gt_boxes.items()}
    tp = fp = 0
    points = []
    for _, (iid, _, box) in ranked:
        best, arg = -1.0, None
        for j, g in enumerate(gt_boxes[iid]):
            if taken[iid][j]:
                continue
            ov = raster_overlap(box, g)
            if ov > best:
                best, arg = ov, j
        if arg is not None and best >= min_overlap:
            taken[iid][arg] = True
            tp += 1
        else:
            fp += 1
        points.append((Fraction(tp, n_pos), Fraction(tp, tp + fp)))
    eleven = Fraction(0)
    for i in range(11):
        cands = [p for r, p in points if r >= Fraction(i, 10)]
        eleven += max(cands) if cands else 0
    allp = Fraction(0)
    prev_r = Fraction(0)
    for i, (r, _) in enumerate(points):
        allp += (r - prev_r) * max(p for _, p in points[i:])
        prev_r = r
    return float(eleven / 11), float(allp)


def manifest_of(gt_boxes):
    entries = [ManifestEntry(iid, iid + ".pgm", [GroundTruth("obj", BoundingBox(*b)) for b in boxes])
               for iid, boxes in gt_boxes.items()]
    return DatasetManifest(entries, ["obj"])


def records(dets):
    return [DetectionRecord(iid, s, BoundingBox(*b), 0) for iid, s, b in dets]


def random_scenario(rng):
    n_img = int(rng.integers(1, 4))
    gt = {f"im{i}": [random_box(rng, 80) for _ in range(rng.integers(1, 4))] for i in range(n_img)}
    dets = []
    for _ in range(rng.integers(1, 12)):
        iid = f"im{rng.integers(n_img)}"
        if rng.random() < 0.6:
            x0, y0, x1, y1 = gt[iid][rng.integers(len(gt[iid]))]
            d = rng.integers(-3, 4, 4)
            box = (x0 + d[0], y0 + d[1], max(x1 + d[2], x0 + d[0] + 1), max(y1 + d[3], y0 + d[1] + 1))
        else:
            box = random_box(rng, 80)
        # coarse scores so ties occur
        dets.append((iid, float(rng.integers(0, 5)) / 4, box))
    return gt, dets


def test_ap_matches_brute_force(rng):
    for _ in range(200):
        gt, dets = random_scenario(rng)
        eleven, allp = brute_force_ap(dets, gt)
        man = manifest_of(gt)
        assert average_precision(records(dets), man, "obj").ap == eleven
        assert average_precision(records(dets), man, "obj", protocol="all-points").ap == allp


def test_ap_worked_example():
    # 3 GT, ranked TP, FP, TP
    assert ap_from_flags([True, False, True], 3).ap == float(Fraction(6, 11))
    assert ap_from_flags([True, False, True], 3, "all-points").ap == float(Fraction(5, 9))


def test_perfect_and_empty():
    gt = {"a": [(0, 0, 10, 10), (20, 20, 40, 40)]}
    dets = [("a", 0.9, (0, 0, 10, 10)), ("a", 0.8, (20, 20, 40, 40))]
    for protocol in ("voc2007-11pt", "all-points"):
        assert average_precision(records(dets), manifest_of(gt), protocol=protocol).ap == 1.0
        assert average_precision([], manifest_of(gt), protocol=protocol).ap == 0.0


def test_duplicate_detection_is_false_positive():
    gt = {"a": [(0, 0, 10, 10)]}
    dets = records([("a", 0.9, (0, 0, 10, 10)), ("a", 0.8, (0, 0, 10, 10))])
    flags, n_pos = match_detections(dets, manifest_of(gt), "obj")
    assert flags == [True, False] and n_pos == 1


def test_ignored_boxes_neither_count_nor_penalise():
    man = DatasetManifest([ManifestEntry("a", "a.pgm", [
        GroundTruth("obj", BoundingBox(0, 0, 10, 10)),
        GroundTruth("obj", BoundingBox(50, 50, 60, 60), ignore=True)])], ["obj"])
    dets = records([("a", 0.9, (50, 50, 60, 60)), ("a", 0.5, (0, 0, 10, 10))])
    flags, n_pos = match_detections(dets, man, "obj")
    assert flags == [True] and n_pos == 1


def test_unknown_image_and_bad_threshold():
    man = manifest_of({"a": [(0, 0, 10, 10)]})
    with pytest.raises(KeyError):
        average_precision(records([("zz", 1.0, (0, 0, 5, 5))]), man)
    with pytest.raises(ValueError):
        average_precision([], man, min_overlap=0.0)
    with pytest.raises(ValueError):
        ap_from_flags([True], 1, protocol="voc2012")


@given(st.lists(st.booleans(), max_size=40), st.integers(0, 10))
def test_curve_invariants(flags, extra):
    n_pos = sum(flags) + extra
    for protocol in ("voc2007-11pt", "all-points"):
        curve = ap_from_flags(flags, n_pos, protocol)
        rec = [r for r, _ in curve.points]
        assert rec == sorted(rec)
        assert 0.0 <= curve.ap <= 1.0


def test_report_and_csv(tmp_path):
    curve = ap_from_flags([True, False, True], 3)
    text = format_report(curve, "obj", 3)
    assert "AP: 0.545455" in text and "positives: 3" in text
    path = tmp_path / "pr.csv"
    write_pr_csv(curve, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "rank,recall,precision" and len(lines) == 4
