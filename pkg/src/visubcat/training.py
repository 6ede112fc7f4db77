"""Latent mixture SVM: subcategory initialisation, hard-negative mining and
alternating weight / assignment updates.

The trained quantity is

    1/2 sum_k ||w_k||^2 + C * sum_i max(0, 1 - y_i s_i^{z_i})

with s_i^k = w_k . phi_k(x_i) + b_k. Positives carry a latent subcategory
z_i; every background window is charged to the subcategory that scored it.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .calibration import calibrate_model
from .clustering import aspect_ratio_split, kmeans, whiten
from .detection import placement_counts, score_windows, window_vector
from .features import build_pyramid, window_feature
from .model import MixtureModel, SubcategoryModel
from .svm import train_linear_svm


# cached negatives this far below the hinge boundary are dropped after a solve
_EASY_MARGIN = 0.05


class InsufficientDataError(ValueError):
    pass


# ------------------------------------------------------------ geometry & init


def canonical_geometry(boxes, cell_size=8, max_area=40.0):
    """(width, height) in cells: median aspect, area ~ 80th percentile (capped)."""
    if not boxes:
        raise InsufficientDataError("no boxes to derive a window geometry from")
    aspect = float(np.median([b.width / b.height for b in boxes]))
    areas = np.sort([b.area / cell_size ** 2 for b in boxes])
    area = min(float(areas[int(math.floor(0.8 * (len(areas) - 1)))]), float(max_area))
    w = max(2, int(math.floor(math.sqrt(area * aspect) + 0.5)))
    h = max(2, int(math.floor(math.sqrt(area / aspect) + 0.5)))
    return w, h


def positive_feature(img, box, canon_w, canon_h, cell_size, use_fine):
    """Root (and fine, at twice the resolution) window features, concatenated."""
    root = window_feature(img, box, canon_w, canon_h, cell_size)
    if not use_fine:
        return root
    return np.concatenate([root, window_feature(img, box, 2 * canon_w, 2 * canon_h, cell_size)])


def _feature_matrix(positives, geom, cell_size, use_fine):
    cw, ch = geom
    return np.array([positive_feature(img, box, cw, ch, cell_size, use_fine)
                     for img, box in positives])


def init_subcategories(positives, cfg):
    """Cluster positives warped to one common window into ``cfg.K`` groups.

    Returns (LatentAssignment, per-subcategory (w, h) geometry, whitening stats).
    """
    n = len(positives)
    if n < cfg.K:
        raise InsufficientDataError(f"need at least K={cfg.K} positives, got {n}")
    boxes = [b for _, b in positives]
    common = canonical_geometry(boxes, cfg.cell_size, cfg.max_canon_area)
    X = _feature_matrix(positives, common, cfg.cell_size, cfg.use_fine)
    Xw, mean, scale = whiten(X)
    if cfg.K == 1:
        z = np.zeros(n, dtype=np.int64)
    elif cfg.init == "aspect":
        z = aspect_ratio_split(boxes, cfg.K)
    else:
        z = kmeans(Xw, cfg.K, restarts=cfg.kmeans_restarts, seed=cfg.seed).assignments
    z = np.asarray(z, dtype=np.int64)
    geoms = []
    for k in range(cfg.K):
        members = [boxes[i] for i in np.nonzero(z == k)[0]]
        geoms.append(canonical_geometry(members or boxes, cfg.cell_size, cfg.max_canon_area))
    return LatentAssignment(z), geoms, {"mean": mean, "scale": scale, "common": common}


# ------------------------------------------------------------ latent assignment


@dataclass
class LatentAssignment:
    z: np.ndarray                   # per-positive subcategory index
    placement: np.ndarray = None    # (n, K) chosen candidate window per subcategory

    def counts(self, K):
        return np.bincount(self.z, minlength=K)


def assign_argmax(scores, prev=None):
    """Row-wise argmax of an (n, K) score matrix.

    Exact ties go to the previous assignment when it is among the maxima,
    otherwise to the lowest index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    z = np.argmax(scores, axis=1).astype(np.int64)
    if prev is not None:
        prev = np.asarray(prev, dtype=np.int64)
        rows = np.arange(scores.shape[0])
        keep = scores[rows, prev] == scores[rows, z]
        z[keep] = prev[keep]
    return z


def _placement_candidates(pyr, box, canon_w, canon_h, min_overlap):
    """Root placements of one geometry overlapping ``box`` by >= min_overlap,
    in scan order; the single best-overlapping one when none qualifies."""
    cands, best = [], None
    cs = pyr.cell_size
    for li in range(pyr.interval, len(pyr.levels)):
        ny, nx = placement_counts(pyr, li, canon_w, canon_h)
        if ny == 0:
            continue
        lv = pyr.levels[li]
        x0 = (np.arange(nx) + 1) * cs / lv.scale_x
        y0 = (np.arange(ny) + 1) * cs / lv.scale_y
        x1 = x0 + canon_w * cs / lv.scale_x
        y1 = y0 + canon_h * cs / lv.scale_y
        iw = np.maximum(0.0, np.minimum(x1, box.x1) - np.maximum(x0, box.x0))
        ih = np.maximum(0.0, np.minimum(y1, box.y1) - np.maximum(y0, box.y0))
        inter = ih[:, None] * iw[None, :]
        area = (y1 - y0)[:, None] * (x1 - x0)[None, :]
        ov = inter / (area + box.area - inter)
        for y, x in zip(*np.nonzero(ov >= min_overlap)):
            cands.append((li, int(y), int(x), float(ov[y, x])))
        y, x = np.unravel_index(int(np.argmax(ov)), ov.shape)
        if best is None or ov[y, x] > best[3]:
            best = (li, int(y), int(x), float(ov[y, x]))
    if not cands and best is not None:
        cands = [best]
    return cands


class PositiveSet:
    """Candidate feature vectors of every positive for every subcategory.

    With ``mode="latent"`` the candidates of a positive are the pyramid
    windows of that subcategory's geometry that overlap its box by at least
    ``min_overlap``; the best-scoring one is chosen with z. With
    ``mode="warp"`` the single candidate is the box warped to the geometry.
    """

    def __init__(self, feats, overlaps):
        self.feats = feats          # feats[k][i]: (n_candidates, dim)
        self.overlaps = overlaps    # overlaps[k][i]: (n_candidates,)

    @property
    def n(self):
        return len(self.feats[0])

    @property
    def K(self):
        return len(self.feats)

    @classmethod
    def build(cls, positives, geoms, cell_size, interval, use_fine, mode="latent",
              min_overlap=0.7):
        K, n = len(geoms), len(positives)
        feats = [[None] * n for _ in range(K)]
        overlaps = [[None] * n for _ in range(K)]
        groups = {}
        for i, (img, _) in enumerate(positives):
            groups.setdefault(id(img), []).append(i)
        min_cells = (min(h for _, h in geoms), min(w for w, _ in geoms))
        for members in groups.values():
            img = positives[members[0]][0]
            pyr = None
            if mode == "latent":
                pyr = build_pyramid(img, cell_size, interval, min_cells=min_cells)
            for i in members:
                box = positives[i][1]
                for k, (cw, ch) in enumerate(geoms):
                    cands = [] if pyr is None else _placement_candidates(pyr, box, cw, ch, min_overlap)
                    if cands:
                        feats[k][i] = np.array([window_vector(pyr, li, y, x, cw, ch, use_fine)
                                                for li, y, x, _ in cands])
                        overlaps[k][i] = np.array([c[3] for c in cands])
                    else:
                        feats[k][i] = positive_feature(img, box, cw, ch, cell_size, use_fine)[None, :]
                        overlaps[k][i] = np.ones(1)
        return cls(feats, overlaps)

    def initial_placement(self):
        """Best-overlapping candidate (first in scan order on ties)."""
        return np.array([[int(np.argmax(self.overlaps[k][i])) for k in range(self.K)]
                         for i in range(self.n)], dtype=np.int64).reshape(self.n, self.K)

    def best(self, model, prev_placement=None):
        """(n, K) best candidate score and its index; ties keep the previous
        candidate, else the first in scan order."""
        S = np.empty((self.n, self.K))
        P = np.empty((self.n, self.K), dtype=np.int64)
        for k, sub in enumerate(model.subcategories):
            w, b = sub.weight_vector(), sub.bias
            for i in range(self.n):
                s = self.feats[k][i] @ w + b
                p = int(np.argmax(s))
                if prev_placement is not None and s[prev_placement[i, k]] == s[p]:
                    p = int(prev_placement[i, k])
                S[i, k], P[i, k] = s[p], p
        return S, P

    def scores_at(self, model, placement):
        """(n, K) scores of the given candidates."""
        S = np.empty((self.n, self.K))
        for k, sub in enumerate(model.subcategories):
            w, b = sub.weight_vector(), sub.bias
            for i in range(self.n):
                S[i, k] = float(self.feats[k][i][placement[i, k]] @ w) + b
        return S

    def matrix(self, k, idx, placement):
        return np.array([self.feats[k][i][placement[i, k]] for i in idx])

    def all_finite(self):
        return all(np.all(np.isfinite(f)) for fk in self.feats for f in fk)


def latent_reassign(model, positives, prev=None, pos_set=None, mode="latent"):
    """Assign each positive to its best-scoring subcategory (and window).

    ``positives`` is a list of (image, box). ``prev`` is the previous
    LatentAssignment, used only to break exact ties.
    """
    if pos_set is None:
        geoms = [(s.canon_w_cells, s.canon_h_cells) for s in model.subcategories]
        pos_set = PositiveSet.build(positives, geoms, model.cell_size, model.interval,
                                    model.use_fine, mode)
    prev_p = None if prev is None else prev.placement
    S, P = pos_set.best(model, prev_p)
    z = assign_argmax(S, None if prev is None else prev.z)
    return LatentAssignment(z, P)


# ------------------------------------------------------------ negatives


class NegativeCache:
    """Background windows shared by all subcategories, keyed by
    (k, image, level, y, x). Over the limit, the lowest-scoring are evicted
    (ties: larger key first), so the retained set is scan-order independent.
    """

    def __init__(self, limit):
        if limit < 1:
            raise ValueError("cache_limit must be >= 1")
        self.limit = int(limit)
        self.feats = {}
        self.scores = {}

    def __len__(self):
        return len(self.feats)

    def __contains__(self, key):
        return key in self.feats

    def add(self, key, feat, score):
        self.feats[key] = feat
        self.scores[key] = float(score)

    def rescore(self, model):
        for key, f in self.feats.items():
            sub = model.subcategories[key[0]]
            self.scores[key] = float(f @ sub.weight_vector() + sub.bias)

    def prune(self, below):
        """Drop entries scoring below ``below``; returns how many."""
        easy = [key for key, v in self.scores.items() if v < below]
        for key in easy:
            del self.feats[key]
            del self.scores[key]
        return len(easy)

    def evict(self):
        """Drop the lowest-scoring entries beyond the limit; returns how many."""
        extra = len(self.feats) - self.limit
        if extra <= 0:
            return 0
        order = sorted(self.feats, key=lambda key: (self.scores[key], _neg_key(key)))
        for key in order[:extra]:
            del self.feats[key]
            del self.scores[key]
        return extra

    def matrix(self, k, dim):
        keys = sorted(key for key in self.feats if key[0] == k)
        if not keys:
            return np.empty((0, dim))
        return np.array([self.feats[key] for key in keys])


def _neg_key(key):
    return tuple(-v for v in key)


@dataclass
class MiningResult:
    added: int
    candidates: int
    hinge_sum: float        # sum over *all* windows of max(0, 1 + s)
    evicted: int


def _scan_image(model, img_idx, pyr, threshold):
    found = []
    hinge = 0.0
    for sub in model.subcategories:
        for ls in score_windows(pyr, sub):
            hinge += float(np.maximum(0.0, 1.0 + ls.scores).sum())
            ys, xs = np.nonzero(ls.scores > threshold)
            for y, x in zip(ys.tolist(), xs.tolist()):
                found.append(((sub.k, img_idx, ls.level, y, x), float(ls.scores[y, x])))
    return found, hinge


def mine_hard_negatives(model, neg_pyramids, threshold=-1.0, cache_limit=10000, cache=None,
                        threads=1, prune_below=None):
    """Scan every negative pyramid with every template and cache windows scoring
    above ``threshold`` for the subcategory that scored them.

    ``neg_pyramids`` is a list of FeaturePyramids. Scan order is image, then
    subcategory, level, row, column; parallel scans are merged in that order.
    With ``prune_below`` set, cached windows now scoring below it are
    dropped first (they carry no hinge loss at the current weights).
    Returns (cache, MiningResult).
    """
    if cache is None:
        cache = NegativeCache(cache_limit)
    cache.rescore(model)
    if prune_below is not None:
        cache.prune(prune_below)
    jobs = list(enumerate(neg_pyramids))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _scan_image(model, j[0], j[1], threshold), jobs))
    else:
        results = [_scan_image(model, i, p, threshold) for i, p in jobs]
    fresh = {}
    candidates = 0
    hinge = 0.0
    for (found, h) in results:
        hinge += h
        candidates += len(found)
        for key, score in found:
            if key not in cache:
                fresh[key] = score
    # rank cached and fresh windows together; only survivors get features
    ranked = sorted([(v, key) for key, v in cache.scores.items()] + [(v, key) for key, v in fresh.items()],
                    key=lambda t: (-t[0], t[1]))
    keep = {key for _, key in ranked[:cache.limit]}
    evicted = 0
    for key in [key for key in cache.feats if key not in keep]:
        del cache.feats[key]
        del cache.scores[key]
        evicted += 1
    added = 0
    for key, score in fresh.items():
        if key not in keep:
            evicted += 1
            continue
        k, img_idx, level, y, x = key
        sub = model.subcategories[k]
        feat = window_vector(neg_pyramids[img_idx], level, y, x, sub.canon_w_cells,
                             sub.canon_h_cells, sub.fine_w is not None)
        cache.add(key, feat, score)
        added += 1
    return cache, MiningResult(added, candidates, hinge, evicted)


def seed_random_negatives(model, neg_pyramids, per_subcategory, cache, seed):
    """Uniformly sampled background windows so the first solve has negatives."""
    for sub in model.subcategories:
        slots = []
        for i, pyr in enumerate(neg_pyramids):
            for li in range(pyr.interval, len(pyr.levels)):
                ny, nx = placement_counts(pyr, li, sub.canon_w_cells, sub.canon_h_cells)
                if ny:
                    slots.append((i, li, ny, nx))
        if not slots:
            raise InsufficientDataError(
                f"no background window fits subcategory {sub.k} geometry "
                f"{sub.canon_w_cells}x{sub.canon_h_cells}")
        sizes = np.array([s[2] * s[3] for s in slots])
        cum = np.cumsum(sizes)
        rng = np.random.default_rng([seed, 7919, sub.k])
        n = min(per_subcategory, int(cum[-1]))
        for flat in np.sort(rng.choice(int(cum[-1]), size=n, replace=False)):
            j = int(np.searchsorted(cum, flat, side="right"))
            off = int(flat - (cum[j - 1] if j else 0))
            i, li, ny, nx = slots[j]
            y, x = divmod(off, nx)
            key = (sub.k, i, li, y, x)
            feat = window_vector(neg_pyramids[i], li, y, x, sub.canon_w_cells,
                                 sub.canon_h_cells, sub.fine_w is not None)
            cache.add(key, feat, sub.bias)


# ------------------------------------------------------------ training loop


def _collect_positives(dataset, label):
    return [(e.load(), g.box) for _, e, g in dataset.positives(label)]


def _solve_all(model, pos_set, assign, cache, cfg, pool):
    """Retrain every subcategory that owns positives, warm-started from its
    current weights. Subcategories without positives are frozen."""
    jobs = []
    for k, sub in enumerate(model.subcategories):
        idx = np.nonzero(assign.z == k)[0]
        if idx.size == 0:
            sub.frozen = True
            continue
        sub.frozen = False
        neg = cache.matrix(k, sub.dim)
        if neg.shape[0] == 0:
            continue
        jobs.append((sub, pos_set.matrix(k, idx, assign.placement), neg))

    def solve(job):
        sub, pos, neg = job
        return train_linear_svm(pos, neg, cfg.C, tol=cfg.solver_tol,
                                init=(sub.weight_vector(), sub.bias))

    results = list(pool.map(solve, jobs)) if pool is not None else [solve(j) for j in jobs]
    for (sub, _, _), (w, b, _) in zip(jobs, results):
        sub.set_weights(w, b)


def full_objective(model, pos_set, assign, neg_hinge, C):
    """Objective with the negative term summed over every background window."""
    reg = 0.5 * sum(float(s.weight_vector() @ s.weight_vector()) for s in model.subcategories)
    S = pos_set.scores_at(model, assign.placement)
    pos_hinge = float(np.maximum(0.0, 1.0 - S[np.arange(len(assign.z)), assign.z]).sum())
    return reg + C * (pos_hinge + neg_hinge)


def _snapshot(model):
    return [(s.weight_vector(), s.bias, s.frozen) for s in model.subcategories]


def _restore(model, snap):
    for s, (w, b, frozen) in zip(model.subcategories, snap):
        s.set_weights(w, b)
        s.frozen = frozen


def train_mixture(dataset, cfg, label=None, negative_pyramids=None, callback=None):
    """Latent training of a K-subcategory mixture for one category.

    Each outer iteration retrains all subcategories against the shared cache
    and re-mines until no new hard window appears, then reassigns positives
    by argmax. The objective (recomputed over all background windows) is
    recorded after each reassignment; a weight update that would raise it is
    rolled back, so the trace never increases. ``callback(model, pos_set,
    assignment)`` runs after every reassignment.
    """
    if label is None:
        if len(dataset.categories) != 1:
            raise ValueError("label must be given for multi-category manifests")
        label = dataset.categories[0]
    positives = _collect_positives(dataset, label)
    negatives = dataset.negatives(label)
    if len(positives) < cfg.K:
        raise InsufficientDataError(f"need at least K={cfg.K} positive boxes, got {len(positives)}")
    if not negatives:
        raise InsufficientDataError(f"no image without {label!r} to mine negatives from")

    init, geoms, stats = init_subcategories(positives, cfg)
    subs = [SubcategoryModel.zeros(k, w, h, cfg.use_fine) for k, (w, h) in enumerate(geoms)]
    model = MixtureModel(label, subs, {
        "cell_size": cfg.cell_size, "interval": cfg.interval, "use_fine": cfg.use_fine,
        "whiten_mean": stats["mean"], "whiten_scale": stats["scale"],
        "common_geometry": list(stats["common"]),
    })
    pos_set = PositiveSet.build(positives, geoms, cfg.cell_size, cfg.interval, cfg.use_fine,
                                cfg.positive_windows, cfg.placement_overlap)
    if not pos_set.all_finite():
        raise ValueError("non-finite positive features")
    assign = LatentAssignment(init.z, pos_set.initial_placement())

    if negative_pyramids is None:
        min_cells = model.min_cells()
        negative_pyramids = [build_pyramid(e.load(), cfg.cell_size, cfg.interval,
                                           min_cells=min_cells, threads=cfg.threads)
                             for e in negatives]
    cache = NegativeCache(cfg.cache_limit)
    seed_random_negatives(model, negative_pyramids, cfg.random_negatives, cache, cfg.seed)

    trace, rounds_log, rollbacks = [], [], 0
    counts = [assign.counts(cfg.K).tolist()]
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        prev_obj = math.inf
        for _ in range(cfg.latent_iters):
            snap = _snapshot(model)
            rounds = 0
            for rounds in range(1, cfg.neg_mining_rounds + 1):
                _solve_all(model, pos_set, assign, cache, cfg, pool)
                cache, mined = mine_hard_negatives(model, negative_pyramids, cfg.mining_threshold,
                                                   cfg.cache_limit, cache, cfg.threads,
                                                   prune_below=cfg.mining_threshold - _EASY_MARGIN)
                if mined.added == 0:
                    break
            obj = full_objective(model, pos_set, assign, mined.hinge_sum, cfg.C)
            if obj > prev_obj:
                # the cache missed part of the background: keep the old weights
                _restore(model, snap)
                rollbacks += 1
                cache, mined = mine_hard_negatives(model, negative_pyramids, cfg.mining_threshold,
                                                   cfg.cache_limit, cache, cfg.threads)
            assign = latent_reassign(model, positives, assign, pos_set)
            obj = full_objective(model, pos_set, assign, mined.hinge_sum, cfg.C)
            trace.append(obj)
            counts.append(assign.counts(cfg.K).tolist())
            rounds_log.append(rounds)
            for k, sub in enumerate(model.subcategories):
                sub.frozen = not np.any(assign.z == k)
            if callback is not None:
                callback(model, pos_set, assign)
            if cfg.early_stop and prev_obj - obj < cfg.solver_tol * abs(prev_obj):
                break
            prev_obj = obj
    finally:
        if pool is not None:
            pool.shutdown()

    model.train_meta = {
        "objective_trace": trace,
        "assignment_counts": counts,
        "mining_rounds": rounds_log,
        "rollbacks": rollbacks,
        "assignments": assign.z.tolist(),
        "n_positives": len(positives),
        "n_negative_images": len(negatives),
        "cache_size": len(cache),
        "config": dict(vars(cfg)),
    }
    return model


def train_detector(dataset, cfg, label=None):
    """Train on the head of the manifest, calibrate on the held-out tail."""
    train_set, val_set = dataset.split(cfg.val_fraction)
    model = train_mixture(train_set, cfg, label)
    calibrate_model(model, val_set, cfg.raw_thresh, cfg.nms_overlap, cfg.threads)
    return model

