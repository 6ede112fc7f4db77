"""Sliding-window scoring of two-resolution rigid templates, fusion and NMS."""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List

import numpy as np

from .calibration import calibrate_array
from .evaluation import overlap
from .features import build_pyramid
from .imaging import BoundingBox
from .kernels import correlate


class UncalibratedModelError(RuntimeError):
    pass


@dataclass
class Detection:
    box: BoundingBox
    raw: float
    score: float
    k: int
    level: int


@dataclass
class DetectionRecord:
    """One line of a detection file."""

    image_id: str
    score: float
    box: BoundingBox
    k: int


@dataclass
class LevelScores:
    level: int
    scores: np.ndarray      # (ny, nx) over root anchors


def placement_counts(pyr, level, canon_w, canon_h):
    """(ny, nx) root anchors at ``level`` whose fine partner also fits; (0, 0) if none."""
    if level < pyr.interval or level >= len(pyr.levels):
        return 0, 0
    root = pyr.levels[level].grid
    fine = pyr.levels[level - pyr.interval].grid
    ny = min(root.cells_y - canon_h + 1, (fine.cells_y - 2 * canon_h - 1) // 2 + 1)
    nx = min(root.cells_x - canon_w + 1, (fine.cells_x - 2 * canon_w - 1) // 2 + 1)
    if ny <= 0 or nx <= 0:
        return 0, 0
    return ny, nx


def score_windows(pyr, sub):
    """Score every root placement that has a one-octave-finer partner level.

    s(y, x) = root_w * root_grid[y:, x:] + fine_w * fine_grid[2y+1:, 2x+1:] + bias.
    The fine anchor sits at 2y+1 because each grid drops one border cell.
    Levels below ``pyr.interval`` (no finer partner) are skipped, with or
    without a fine template, so both variants share one placement set.
    """
    if sub.root_w.shape[2] != pyr.levels[0].grid.dim:
        raise ValueError("model/pyramid feature dimensionality mismatch")
    out = []
    for li in range(pyr.interval, len(pyr.levels)):
        ny, nx = placement_counts(pyr, li, sub.canon_w_cells, sub.canon_h_cells)
        if ny == 0:
            continue
        s = correlate(pyr.levels[li].grid.values, sub.root_w)[:ny, :nx]
        if sub.fine_w is not None:
            fine = pyr.levels[li - pyr.interval].grid.values
            s = s + correlate(fine, sub.fine_w, offset=1, stride=2)[:ny, :nx]
        out.append(LevelScores(li, s + sub.bias))
    return out


def placement_box(pyr, level, y, x, canon_w, canon_h, clip=True):
    """Image-space box of a root placement; integer coordinates, clipped to the image."""
    lv = pyr.levels[level]
    cs = pyr.cell_size
    x0 = (x + 1) * cs / lv.scale_x
    y0 = (y + 1) * cs / lv.scale_y
    x1 = (x + 1 + canon_w) * cs / lv.scale_x
    y1 = (y + 1 + canon_h) * cs / lv.scale_y
    r = lambda v: int(math.floor(v + 0.5))  # noqa: E731
    bx0, by0, bx1, by1 = r(x0), r(y0), r(x1), r(y1)
    if clip:
        bx0, by0 = max(0, bx0), max(0, by0)
        bx1, by1 = min(pyr.image_width, bx1), min(pyr.image_height, by1)
    return BoundingBox(bx0, by0, max(bx1, bx0 + 1), max(by1, by0 + 1))


def window_vector(pyr, level, y, x, canon_w, canon_h, use_fine=True):
    """Feature vector of a placement, laid out like ``SubcategoryModel.weight_vector``."""
    root = pyr.levels[level].grid.values[y:y + canon_h, x:x + canon_w].reshape(-1)
    if not use_fine:
        return root.copy()
    fine = pyr.levels[level - pyr.interval].grid.values[
        2 * y + 1:2 * y + 1 + 2 * canon_h, 2 * x + 1:2 * x + 1 + 2 * canon_w].reshape(-1)
    return np.concatenate([root, fine])


def nms(dets, max_overlap=0.5):
    """Greedy suppression: highest score first (ties: lower k, then box), keep
    a detection only if its overlap with every kept one is <= max_overlap."""
    if not 0.0 <= max_overlap < 1.0:
        raise ValueError("max_overlap must lie in [0, 1)")
    order = sorted(dets, key=lambda d: (-d.score, d.k, d.box.as_tuple()))
    kept = []
    if not order:
        return kept
    boxes = np.array([d.box.as_tuple() for d in order], dtype=np.float64)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    alive = np.ones(len(order), dtype=bool)
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(order[i])
        rest = np.nonzero(alive[i + 1:])[0] + i + 1
        if rest.size == 0:
            break
        iw = np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0])
        ih = np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1])
        inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
        ov = inter / (areas[i] + areas[rest] - inter)
        alive[rest[ov > max_overlap]] = False
    return kept


def detect(img, model, raw_thresh=-1.0, nms_overlap=0.5, bypass_calibration=False,
           pyramid=None, threads=1):
    """Detections of ``model`` in ``img`` after calibration and NMS, best first.

    With ``bypass_calibration`` the score field carries the raw score.
    Degenerate subcategories contribute calibrated scores of exactly 0.
    """
    if not model.calibrated and not bypass_calibration:
        raise UncalibratedModelError(
            f"model {model.label!r} is not calibrated; pass bypass_calibration=True for raw scores")
    pyr = pyramid or build_pyramid(img, model.cell_size, model.interval,
                                   min_cells=model.min_cells(), threads=threads)

    def run(sub):
        found = []
        for ls in score_windows(pyr, sub):
            ys, xs = np.nonzero(ls.scores > raw_thresh)
            if ys.size == 0:
                continue
            raw = ls.scores[ys, xs]
            if bypass_calibration:
                cal = raw
            elif sub.degenerate:
                cal = np.zeros_like(raw)
            else:
                cal = calibrate_array(raw, sub.A, sub.B)
            for y, x, r, g in zip(ys.tolist(), xs.tolist(), raw.tolist(), cal.tolist()):
                box = placement_box(pyr, ls.level, y, x, sub.canon_w_cells, sub.canon_h_cells)
                found.append(Detection(box, r, g, sub.k, ls.level))
        return found

    if threads > 1 and model.K > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, model.subcategories))
    else:
        parts = [run(s) for s in model.subcategories]
    pool_dets = [d for part in parts for d in part]
    return nms(pool_dets, nms_overlap)


# ------------------------------------------------------------ detection IO


def format_detections(image_id, dets):
    lines = []
    for d in dets:
        b = d.box
        lines.append(f"{image_id} {d.score:.6f} {_num(b.x0)} {_num(b.y0)} {_num(b.x1)} {_num(b.y1)} {d.k}")
    return lines


def _num(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_detections(path, per_image):
    """``per_image`` is an iterable of (image_id, [Detection])."""
    with open(path, "w") as fh:
        for image_id, dets in per_image:
            for line in format_detections(image_id, dets):
                fh.write(line + "\n")


class DetectionFileError(ValueError):
    pass


def read_detections(path) -> List[DetectionRecord]:
    """Parse ``image_id score x0 y0 x1 y1 k`` lines; blank lines and '#' comments skipped."""
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7:
                raise DetectionFileError(f"{path}:{n}: expected 7 fields, got {len(parts)}")
            try:
                score = float(parts[1])
                coords = [float(v) for v in parts[2:6]]
                k = int(parts[6])
                box = BoundingBox(*(int(c) if c.is_integer() else c for c in coords))
            except ValueError as exc:
                raise DetectionFileError(f"{path}:{n}: {exc}") from None
            if not math.isfinite(score):
                raise DetectionFileError(f"{path}:{n}: non-finite score")
            out.append(DetectionRecord(parts[0], score, box, k))
    return out


def to_records(image_id, dets):
    """In-memory records with scores rounded exactly as a detection file stores them."""
    return [DetectionRecord(image_id, float(f"{d.score:.6f}"), d.box, d.k) for d in dets]

