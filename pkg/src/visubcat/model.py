"""Training configuration, subcategory templates and JSON persistence."""
import json
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from .kernels import HOG_DIM

MODEL_FORMAT = "visubcat-mixture"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    C: float = 0.05
    K: int = 15
    latent_iters: int = 5
    solver_tol: float = 1e-7
    neg_mining_rounds: int = 8
    cache_limit: int = 10000
    seed: int = 0
    cell_size: int = 8
    interval: int = 4
    use_fine: bool = True
    init: str = "kmeans"            # "kmeans" | "aspect"
    kmeans_restarts: int = 10
    max_canon_area: float = 40.0    # cells^2
    random_negatives: int = 200     # per subcategory, seeds the first round
    mining_threshold: float = -1.0
    raw_thresh: float = -1.0
    nms_overlap: float = 0.5
    val_fraction: float = 0.2
    threads: int = 1
    positive_windows: str = "latent"    # "latent" | "warp"
    placement_overlap: float = 0.7
    early_stop: bool = True
    scene_latent_rounds: int = 1

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.init not in ("kmeans", "aspect"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.cell_size < 2 or self.cell_size % 2:
            raise ValueError("cell_size must be an even integer >= 2")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if self.positive_windows not in ("latent", "warp"):
            raise ValueError(f"unknown positive_windows {self.positive_windows!r}")
        if not 0.0 < self.placement_overlap <= 1.0:
            raise ValueError("placement_overlap must lie in (0, 1]")
        if self.scene_latent_rounds < 0:
            raise ValueError("scene_latent_rounds must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return TrainConfig(**data)

    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}


@dataclass
class SubcategoryModel:
    k: int
    canon_w_cells: int
    canon_h_cells: int
    root_w: np.ndarray                  # (h, w, 31)
    fine_w: Optional[np.ndarray]        # (2h, 2w, 31) or None for root-only
    bias: float = 0.0
    A: float = 0.0
    B: float = 0.0
    degenerate: bool = False            # calibration produced A > 0 or too few samples
    frozen: bool = False                # left without positives during training

    def __post_init__(self):
        self.root_w = np.asarray(self.root_w, dtype=np.float64)
        expect = (self.canon_h_cells, self.canon_w_cells, HOG_DIM)
        if self.root_w.shape != expect:
            raise ValueError(f"root weights {self.root_w.shape} do not match geometry {expect}")
        if self.fine_w is not None:
            self.fine_w = np.asarray(self.fine_w, dtype=np.float64)
            fexpect = (2 * self.canon_h_cells, 2 * self.canon_w_cells, HOG_DIM)
            if self.fine_w.shape != fexpect:
                raise ValueError(f"fine weights {self.fine_w.shape} do not match {fexpect}")

    @classmethod
    def zeros(cls, k, canon_w, canon_h, use_fine):
        fine = np.zeros((2 * canon_h, 2 * canon_w, HOG_DIM)) if use_fine else None
        return cls(k, canon_w, canon_h, np.zeros((canon_h, canon_w, HOG_DIM)), fine)

    @property
    def dim(self):
        return self.root_w.size + (0 if self.fine_w is None else self.fine_w.size)

    def weight_vector(self):
        if self.fine_w is None:
            return self.root_w.reshape(-1).copy()
        return np.concatenate([self.root_w.reshape(-1), self.fine_w.reshape(-1)])

    def set_weights(self, w, bias):
        w = np.asarray(w, dtype=np.float64)
        n = self.root_w.size
        self.root_w = w[:n].reshape(self.root_w.shape).copy()
        if self.fine_w is not None:
            self.fine_w = w[n:].reshape(self.fine_w.shape).copy()
        self.bias = float(bias)


@dataclass
class MixtureModel:
    label: str
    subcategories: List[SubcategoryModel]
    feature_params: dict
    train_meta: dict = field(default_factory=dict)
    calibrated: bool = False

    @property
    def K(self):
        return len(self.subcategories)

    @property
    def cell_size(self):
        return int(self.feature_params["cell_size"])

    @property
    def interval(self):
        return int(self.feature_params["interval"])

    @property
    def use_fine(self):
        return bool(self.feature_params.get("use_fine", True))

    def min_cells(self):
        return (min(s.canon_h_cells for s in self.subcategories),
                min(s.canon_w_cells for s in self.subcategories))


# ------------------------------------------------------------------ JSON IO


def _arr(a):
    if a is None:
        return None
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "values": [float(v) for v in a.reshape(-1)]}


def _unarr(d):
    if d is None:
        return None
    return np.array(d["values"], dtype=np.float64).reshape(d["shape"])


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _arr(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def model_to_dict(model):
    subs = []
    for s in model.subcategories:
        subs.append({
            "k": s.k,
            "canon_w_cells": s.canon_w_cells,
            "canon_h_cells": s.canon_h_cells,
            "root_w": _arr(s.root_w),
            "fine_w": _arr(s.fine_w),
            "bias": float(s.bias),
            "A": float(s.A),
            "B": float(s.B),
            "degenerate": bool(s.degenerate),
            "frozen": bool(s.frozen),
        })
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "label": model.label,
        "calibrated": bool(model.calibrated),
        "feature_params": _jsonable(model.feature_params),
        "subcategories": subs,
        "train_meta": _jsonable(model.train_meta),
    }


def model_from_dict(doc):
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    subs = [SubcategoryModel(
        k=int(s["k"]), canon_w_cells=int(s["canon_w_cells"]), canon_h_cells=int(s["canon_h_cells"]),
        root_w=_unarr(s["root_w"]), fine_w=_unarr(s["fine_w"]), bias=float(s["bias"]),
        A=float(s["A"]), B=float(s["B"]), degenerate=bool(s["degenerate"]),
        frozen=bool(s["frozen"])) for s in doc["subcategories"]]
    fp = dict(doc["feature_params"])
    for key in ("whiten_mean", "whiten_scale"):
        if isinstance(fp.get(key), dict):
            fp[key] = _unarr(fp[key])
    return MixtureModel(doc["label"], subs, fp, doc.get("train_meta", {}),
                        bool(doc.get("calibrated", False)))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
