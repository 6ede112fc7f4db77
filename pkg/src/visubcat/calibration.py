"""Per-subcategory sigmoid calibration with overlap-valued soft targets.

Calibrated score: g = 1 / (1 + exp(A*s + B)). (A, B) minimise the
cross-entropy  -sum[t log g + (1 - t) log(1 - g)]  with t in [0, 1].
"""
import math
from dataclasses import dataclass

import numpy as np

from .evaluation import overlap


@dataclass(frozen=True)
class CalibrationSample:
    s: float
    t: float

    def __post_init__(self):
        if not math.isfinite(self.s):
            raise ValueError("calibration score must be finite")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("calibration target must lie in [0, 1]")


@dataclass
class SigmoidParams:
    A: float
    B: float
    degenerate: bool = False
    loss: float = float("nan")
    iterations: int = 0


def calibrate(s, p):
    """Sigmoid of a raw score; never overflows."""
    u = p.A * s + p.B
    if u >= 0.0:
        e = math.exp(-u)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(u))


def calibrate_array(s, A, B):
    u = A * np.asarray(s, dtype=np.float64) + B
    e = np.exp(-np.abs(u))
    return np.where(u >= 0.0, e / (1.0 + e), 1.0 / (1.0 + e))


def sigmoid_loss(A, B, s, t):
    """Cross-entropy of soft targets ``t`` under params (A, B)."""
    u = A * np.asarray(s, dtype=np.float64) + B
    t = np.asarray(t, dtype=np.float64)
    # -[t log g + (1-t) log(1-g)] = softplus(u) - (1-t) u
    return float(np.sum(np.logaddexp(0.0, u) - (1.0 - t) * u))


def _as_arrays(samples):
    if len(samples) == 0:
        raise ValueError("fit_sigmoid needs at least one sample")
    s = np.array([c.s for c in samples], dtype=np.float64)
    t = np.array([c.t for c in samples], dtype=np.float64)
    return s, t


def fit_sigmoid(samples, grad_tol=1e-8, max_iter=200):
    """Damped Newton fit of (A, B) starting from (0, 0).

    Each accepted step decreases the loss, so the result never scores worse
    than (0, 0). A fit with A > 0 (calibrated score falling with the raw
    score), a constant score column, fewer than two samples, or a sample set
    with no finite minimiser (see ``unbounded_fit``) is flagged degenerate.
    """
    s, t = _as_arrays(samples)
    theta = np.zeros(2)
    loss = sigmoid_loss(0.0, 0.0, s, t)
    const_scores = bool(np.ptp(s) == 0.0)
    it = 0
    for it in range(1, max_iter + 1):
        g = calibrate_array(s, theta[0], theta[1])
        r = t - g
        grad = np.array([float(r @ s), float(r.sum())])
        if const_scores:
            grad[0] = 0.0
        if np.linalg.norm(grad) <= grad_tol:
            break
        wgt = g * (1.0 - g)
        H = np.array([[float(wgt @ (s * s)), float(wgt @ s)],
                      [float(wgt @ s), float(wgt.sum())]])
        if const_scores:
            H[0, 0], H[0, 1], H[1, 0] = 1.0, 0.0, 0.0
        H += np.eye(2) * 1e-12 * max(1.0, np.trace(H))
        try:
            step = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = -grad
        slope = float(grad @ step)
        if slope >= 0.0:
            step, slope = -grad, -float(grad @ grad)
        alpha = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + alpha * step
            cl = sigmoid_loss(cand[0], cand[1], s, t)
            if cl <= loss + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted or cl >= loss:
            break
        theta, loss = cand, cl
    A, B = float(theta[0]), float(theta[1])
    degenerate = A > 0.0 or const_scores or len(s) < 2 or unbounded_fit(s, t)
    return SigmoidParams(A, B, degenerate, loss, it)


def unbounded_fit(s, t):
    """True when the cross-entropy has no finite minimiser.

    That happens when some score v splits the samples into t = 0 below v and
    t = 1 above it (or the mirror image), whatever the targets at v itself.
    Every-target-zero is the common case. The loss then keeps falling towards
    a step function at v, and scores on the far side of v would be mapped to
    0 or 1 on the strength of the samples at v alone.
    """
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    order = np.argsort(s, kind="stable")
    s, t = s[order], t[order]
    vals = np.unique(s)
    start = np.searchsorted(s, vals, side="left")     # first sample at v
    stop = np.searchsorted(s, vals, side="right")     # one past the last
    for lo, hi in ((0.0, 1.0), (1.0, 0.0)):
        # below_ok[i]: samples [0, i) all equal lo; above_ok[i]: [i, n) all equal hi
        below_ok = np.concatenate([[True], np.cumprod(t == lo).astype(bool)])
        above_ok = np.concatenate([np.cumprod((t == hi)[::-1])[::-1].astype(bool), [True]])
        if np.any(below_ok[start] & above_ok[stop]):
            return True
    return False


def build_calibration_set(model, val_split, raw_thresh=-1.0, nms_overlap=0.5, threads=1):
    """Per-subcategory (raw score, overlap target) samples from a validation split.

    Runs uncalibrated detection (with NMS) on every image; the target of a
    detection is its best overlap with any same-category ground-truth box.
    """
    from .detection import detect

    out = [[] for _ in range(model.K)]
    for entry in val_split.entries:
        img = entry.load()
        gts = [o.box for o in entry.objects if o.category == model.label]
        dets = detect(img, model, raw_thresh=raw_thresh, nms_overlap=nms_overlap,
                      bypass_calibration=True, threads=threads)
        for d in dets:
            t = max((overlap(d.box, g) for g in gts), default=0.0)
            out[d.k].append(CalibrationSample(d.raw, t))
    return out


def calibrate_model(model, val_split, raw_thresh=-1.0, nms_overlap=0.5, threads=1):
    """Fit and store (A, B) for every subcategory; returns the sample lists."""
    sets = build_calibration_set(model, val_split, raw_thresh, nms_overlap, threads)
    for sub, samples in zip(model.subcategories, sets):
        if len(samples) < 2:
            sub.A, sub.B, sub.degenerate = 0.0, 0.0, True
            continue
        p = fit_sigmoid(samples)
        sub.A, sub.B, sub.degenerate = p.A, p.B, p.degenerate
    model.calibrated = True
    return sets
