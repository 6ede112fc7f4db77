"""One-vs-all scene classification with visual subcategories over GIST.

Each basic-level category gets K linear classifiers. Subcategory k of category
c is trained with its own members as positives and every other category's
examples as negatives; the category's remaining examples are don't-care and
appear in neither set.
"""
import json
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .calibration import CalibrationSample, calibrate_array, fit_sigmoid
from .clustering import kmeans, whiten
from .evaluation import ap_from_flags
from .features import GIST_DIM, GistDescriptor, gist
from .imaging import load_image
from .svm import train_linear_svm

SCENE_FORMAT = "visubcat-scene"
SCENE_VERSION = 1
CACHE_MAGIC = b"SUBCGIST"


class SceneDataError(ValueError):
    pass


@dataclass
class SceneExample:
    descriptor: np.ndarray
    category: str
    subordinate: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.descriptor, GistDescriptor):
            self.descriptor = self.descriptor.values
        self.descriptor = np.asarray(self.descriptor, dtype=np.float64).reshape(-1)
        if not self.category:
            raise SceneDataError("scene example needs a category")


@dataclass
class SceneClassifier:
    w: np.ndarray
    b: float
    A: float = 0.0
    B: float = 0.0
    degenerate: bool = False
    frozen: bool = False
    label: Optional[str] = None     # subordinate label it was seeded from


@dataclass
class SceneModel:
    categories: List[str]
    classifiers: List[List[SceneClassifier]]    # [category][k]
    mean: np.ndarray
    scale: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.mean.size


# ------------------------------------------------------------------ training


def _stack(examples):
    dims = {e.descriptor.size for e in examples}
    if len(dims) != 1:
        raise SceneDataError(f"descriptors of mixed length {sorted(dims)}")
    return np.vstack([e.descriptor for e in examples])


def _initial_partition(examples, idx, Xw, K, init, seed, restarts):
    """Subcategory index per member of one category, plus the seeding labels."""
    if init == "labels":
        subs = [examples[i].subordinate for i in idx]
        if any(s is None for s in subs):
            raise SceneDataError(f"category {examples[idx[0]].category!r}: missing subordinate labels")
        names = sorted(set(subs))
        return np.array([names.index(s) for s in subs], dtype=np.int64), names
    if K == 1:
        return np.zeros(len(idx), dtype=np.int64), [None]
    if len(idx) < K:
        raise SceneDataError(f"category {examples[idx[0]].category!r} has {len(idx)} examples, "
                             f"needs at least K={K}")
    res = kmeans(Xw[idx], K, restarts=restarts, seed=seed)
    return res.assignments.astype(np.int64), [None] * K


def _fit_subcategories(Xw, members, z, neg, K, C, tol, prev):
    """Train the K classifiers of one category; an empty subcategory keeps ``prev``."""
    out = []
    for k in range(K):
        pos = members[z == k]
        if pos.size == 0:
            old = prev[k] if prev else None
            w = old.w if old else np.zeros(Xw.shape[1])
            out.append(SceneClassifier(w, old.b if old else 0.0, frozen=True))
            continue
        init = (prev[k].w, prev[k].b) if prev else None
        w, b, _ = train_linear_svm(Xw[pos], Xw[neg], C, tol=tol, init=init)
        out.append(SceneClassifier(w, b))
    return out


def _reassign(Xw, members, z, clfs):
    """Argmax over the category's classifiers; ties keep the old index, then the lowest."""
    S = np.stack([Xw[members] @ c.w + c.b for c in clfs], axis=1)
    best = S.max(axis=1)
    keep = S[np.arange(len(z)), z] >= best
    return np.where(keep, z, np.argmax(S, axis=1))


def _calibrate_category(clfs, Xv, in_cat):
    """Sigmoid per classifier on held-out data; same-category examples count for the
    classifier that scores them highest and are don't-care for the others."""
    if Xv.shape[0] == 0:
        for c in clfs:
            c.A, c.B, c.degenerate = 0.0, 0.0, True
        return
    S = np.stack([Xv @ c.w + c.b for c in clfs], axis=1)
    owner = np.argmax(S, axis=1)
    for k, c in enumerate(clfs):
        keep = ~in_cat | (owner == k)
        samples = [CalibrationSample(float(s), 1.0 if t else 0.0)
                   for s, t in zip(S[keep, k], in_cat[keep])]
        if len(samples) < 2:
            c.A, c.B, c.degenerate = 0.0, 0.0, True
            continue
        p = fit_sigmoid(samples)
        c.A, c.B, c.degenerate = p.A, p.B, p.degenerate


def train_scene(examples, K, init, cfg, rounds=None):
    """One-vs-all subcategory classifiers for every category in ``examples``.

    The last ``cfg.val_fraction`` of the examples is held out for calibration.
    ``init="labels"`` seeds one subcategory per distinct subordinate label, so K
    then follows the labels. ``rounds`` latent reassign-and-retrain passes
    follow the initial fit (default ``cfg.scene_latent_rounds``).
    """
    if init not in ("kmeans", "labels"):
        raise ValueError(f"unknown init {init!r}")
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(examples) < 2:
        raise SceneDataError("need at least two scene examples")
    rounds = cfg.scene_latent_rounds if rounds is None else rounds
    categories = sorted({e.category for e in examples})
    if len(categories) < 2:
        raise SceneDataError("one-vs-all training needs at least two categories")

    n_val = min(max(int(round(len(examples) * cfg.val_fraction)), 1), len(examples) - 1)
    train, val = examples[:len(examples) - n_val], examples[len(examples) - n_val:]
    X = _stack(train)
    Xw, mean, scale = whiten(X)
    labels = np.array([e.category for e in train])
    Xv = (_stack(val) - mean) / scale
    vlabels = np.array([e.category for e in val])

    classifiers, meta = [], {"assignment_counts": {}, "subordinates": {}}
    for ci, cat in enumerate(categories):
        members = np.nonzero(labels == cat)[0]
        neg = np.nonzero(labels != cat)[0]
        if members.size == 0:
            raise SceneDataError(f"category {cat!r} has no training examples")
        z, names = _initial_partition(train, members, Xw, K, init, cfg.seed + ci, cfg.kmeans_restarts)
        Kc = len(names)
        clfs = _fit_subcategories(Xw, members, z, neg, Kc, cfg.C, cfg.solver_tol, None)
        counts = [np.bincount(z, minlength=Kc).tolist()]
        for _ in range(rounds):
            z = _reassign(Xw, members, z, clfs)
            clfs = _fit_subcategories(Xw, members, z, neg, Kc, cfg.C, cfg.solver_tol, clfs)
            counts.append(np.bincount(z, minlength=Kc).tolist())
        for c, name in zip(clfs, names):
            c.label = name
        _calibrate_category(clfs, Xv, vlabels == cat)
        classifiers.append(clfs)
        meta["assignment_counts"][cat] = counts
        meta["subordinates"][cat] = names
    meta.update(K=K, init=init, rounds=rounds, n_train=len(train), n_val=len(val))
    return SceneModel(categories, classifiers, mean, scale, meta)


# ------------------------------------------------------------------ scoring


def _whitened(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValueError(f"descriptor has {X.shape[1]} entries, model expects {model.dim}")
    return (X - model.mean) / model.scale


def subcategory_scores(model, X):
    """Calibrated scores, one (n, K_c) array per category; degenerate classifiers give 0."""
    Xw = _whitened(model, X)
    out = []
    for clfs in model.classifiers:
        cols = []
        for c in clfs:
            if c.degenerate:
                cols.append(np.zeros(Xw.shape[0]))
            else:
                cols.append(calibrate_array(Xw @ c.w + c.b, c.A, c.B))
        out.append(np.stack(cols, axis=1))
    return out


def category_scores(model, X):
    """(n, n_categories): each category's best calibrated subcategory score."""
    return np.stack([s.max(axis=1) for s in subcategory_scores(model, X)], axis=1)


def classify_scene(d, model):
    """(category, subcategory index, calibrated score) of the best-scoring pair.

    Ties go to the earlier category, then the lower subcategory index.
    """
    if isinstance(d, GistDescriptor):
        d = d.values
    best = None
    for cat, s in zip(model.categories, subcategory_scores(model, d)):
        row = s[0]
        k = int(np.argmax(row))
        if best is None or row[k] > best[2]:
            best = (cat, k, float(row[k]))
    return best


@dataclass
class SceneAPReport:
    per_category: dict
    mean_ap: float


def scene_average_precision(scores, labels, categories, protocol="voc2007-11pt"):
    """Per-category AP of ranking ``scores[:, c]`` against ``labels == categories[c]``.

    Equal scores keep input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != (labels.size, len(categories)):
        raise ValueError(f"need a ({labels.size}, {len(categories)}) score matrix, got {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("missing or non-finite scores")
    per = {}
    for c, cat in enumerate(categories):
        order = np.argsort(-scores[:, c], kind="stable")
        rel = labels[order] == cat
        per[cat] = ap_from_flags(rel, int(rel.sum()), protocol).ap
    return SceneAPReport(per, float(np.mean(list(per.values()))))


def evaluate_scene(model, examples, protocol="voc2007-11pt"):
    S = category_scores(model, _stack(examples))
    return scene_average_precision(S, [e.category for e in examples], model.categories, protocol)


# ------------------------------------------------------------------ synthetic data


def synthetic_scene_set(n=3000, categories=3, modes=2, dim=GIST_DIM, separation=6.0,
                        noise=1.0, seed=0):
    """Gaussian clusters arranged so each category is multimodal and not linearly separable.

    All categories*modes cluster centres sit evenly on a circle in a random 2-D
    plane of the descriptor space. Category c owns centres c, c + categories,
    c + 2*categories, ..., so with two modes its centres are diametrically
    opposed and its mean coincides with everyone else's.
    """
    rng = np.random.default_rng([seed, 4099])
    Q, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    n_centres = categories * modes
    ang = 2.0 * np.pi * np.arange(n_centres) / n_centres
    centres = separation * np.stack([np.cos(ang), np.sin(ang)], axis=1) @ Q.T
    out = []
    for _ in range(n):
        c = int(rng.integers(categories))
        m = int(rng.integers(modes))
        x = 1.0 + centres[m * categories + c] + noise * rng.normal(size=dim)
        out.append(SceneExample(x, f"scene{c}", f"scene{c}.mode{m}"))
    return out


def split_half(examples):
    """First half for training, second half for testing."""
    cut = len(examples) // 2
    return examples[:cut], examples[cut:]


# ------------------------------------------------------------------ IO


def write_descriptor_cache(path, X):
    """8-byte magic, uint64 count, uint64 dim, then count*dim little-endian float64."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype="<f8")))
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<QQ", X.shape[0], X.shape[1]))
        fh.write(X.tobytes())


def read_descriptor_cache(path):
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) < 24 or head[:8] != CACHE_MAGIC:
            raise SceneDataError(f"{path}: not a descriptor cache")
        count, dim = struct.unpack("<QQ", head[8:])
        body = fh.read()
    if len(body) != count * dim * 8:
        raise SceneDataError(f"{path}: expected {count * dim * 8} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(count, dim).astype(np.float64)


def load_scene_manifest(path):
    """Scene examples from a JSON manifest.

    The document is a list of {"image", "category", "subordinate"?} records,
    or an object {"examples": [...], "descriptors": cache path} whose i-th
    cache row is the i-th example's descriptor (``image`` may then be absent).
    """
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    records, X = doc, None
    if isinstance(doc, dict):
        records = doc.get("examples")
        if doc.get("descriptors"):
            X = read_descriptor_cache(os.path.join(base, doc["descriptors"]))
    if not isinstance(records, list):
        raise SceneDataError(f"{path}: expected a list of examples")
    if X is not None and X.shape[0] != len(records):
        raise SceneDataError(f"{path}: {len(records)} examples but {X.shape[0]} cached descriptors")
    out = []
    for i, r in enumerate(records):
        if not isinstance(r, dict) or not r.get("category"):
            raise SceneDataError(f"{path}: example {i} lacks a category")
        if X is not None:
            d = X[i]
        elif r.get("image"):
            d = gist(load_image(os.path.join(base, r["image"]))).values
        else:
            raise SceneDataError(f"{path}: example {i} has neither an image nor a cached descriptor")
        out.append(SceneExample(d, str(r["category"]), r.get("subordinate")))
    return out


def save_scene_manifest(examples, path, cache_name="descriptors.bin"):
    """Write ``examples`` as a manifest plus a descriptor cache next to it."""
    d = os.path.dirname(os.path.abspath(path))
    write_descriptor_cache(os.path.join(d, cache_name), _stack(examples))
    recs = []
    for e in examples:
        r = {"category": e.category}
        if e.subordinate is not None:
            r["subordinate"] = e.subordinate
        recs.append(r)
    with open(path, "w") as fh:
        json.dump({"descriptors": cache_name, "examples": recs}, fh, indent=1)
        fh.write("\n")


def _vec(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def scene_model_to_dict(model):
    return {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "categories": list(model.categories),
        "mean": _vec(model.mean),
        "scale": _vec(model.scale),
        "classifiers": [[{"w": _vec(c.w), "b": float(c.b), "A": float(c.A), "B": float(c.B),
                          "degenerate": bool(c.degenerate), "frozen": bool(c.frozen),
                          "label": c.label} for c in clfs] for clfs in model.classifiers],
        "meta": model.meta,
    }


def scene_model_from_dict(doc):
    if doc.get("format") != SCENE_FORMAT:
        raise ValueError(f"not a {SCENE_FORMAT} document")
    if doc.get("version") != SCENE_VERSION:
        raise ValueError(f"unsupported scene model version {doc.get('version')}")
    clfs = [[SceneClassifier(np.array(c["w"], dtype=np.float64), float(c["b"]), float(c["A"]),
                             float(c["B"]), bool(c["degenerate"]), bool(c["frozen"]), c.get("label"))
             for c in row] for row in doc["classifiers"]]
    return SceneModel(list(doc["categories"]), clfs, np.array(doc["mean"], dtype=np.float64),
                      np.array(doc["scale"], dtype=np.float64), doc.get("meta", {}))


def save_scene_model(model, path):
    with open(path, "w") as fh:
        json.dump(scene_model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_scene_model(path):
    with open(path) as fh:
        return scene_model_from_dict(json.load(fh))
