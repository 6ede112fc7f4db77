"""Dataset manifests: images with labelled boxes, stored as JSON."""
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

from .imaging import BoundingBox, GrayImage, load_image

MANIFEST_FORMAT = "visubcat-manifest"


class ManifestError(ValueError):
    pass


@dataclass
class GroundTruth:
    category: str
    box: BoundingBox
    ignore: bool = False
    subordinate: Optional[str] = None


@dataclass
class ManifestEntry:
    id: str
    path: str
    objects: List[GroundTruth] = field(default_factory=list)
    image: Optional[GrayImage] = field(default=None, repr=False, compare=False)

    def load(self):
        if self.image is None:
            self.image = load_image(self.path)
        return self.image

    def boxes(self, category, include_ignored=False):
        return [o.box for o in self.objects
                if o.category == category and (include_ignored or not o.ignore)]

    def has(self, category):
        return any(o.category == category for o in self.objects)


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    categories: List[str]

    def __post_init__(self):
        known = set(self.categories)
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError(f"duplicate image id {e.id!r}")
            seen.add(e.id)
            for o in e.objects:
                if o.category not in known:
                    raise ManifestError(f"{e.id}: category {o.category!r} not declared")

    def by_id(self):
        return {e.id: e for e in self.entries}

    def split(self, fraction):
        """Deterministic (head, tail) split; the tail holds the last ``fraction`` of entries."""
        n_tail = int(round(len(self.entries) * fraction))
        n_tail = min(max(n_tail, 1), len(self.entries) - 1) if len(self.entries) > 1 else 0
        cut = len(self.entries) - n_tail
        return (DatasetManifest(self.entries[:cut], list(self.categories)),
                DatasetManifest(self.entries[cut:], list(self.categories)))

    def positives(self, category):
        """(entry index, entry, GroundTruth) for every non-ignored instance."""
        return [(i, e, o) for i, e in enumerate(self.entries) for o in e.objects
                if o.category == category and not o.ignore]

    def negatives(self, category):
        """Entries that contain no instance of ``category`` (ignored ones included)."""
        return [e for e in self.entries if not e.has(category)]


def _parse_box(raw, where):
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ManifestError(f"{where}: box must be [x0, y0, x1, y1]")
    try:
        return BoundingBox(*(float(v) if not float(v).is_integer() else int(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: invalid box {raw}: {exc}") from None


def manifest_from_dict(doc, base_dir="."):
    if doc.get("format", MANIFEST_FORMAT) != MANIFEST_FORMAT:
        raise ManifestError("not a visubcat manifest")
    cats = list(doc.get("categories", []))
    entries = []
    for n, raw in enumerate(doc.get("entries", [])):
        if "path" not in raw:
            raise ManifestError(f"entry {n}: missing path")
        path = raw["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        eid = raw.get("id") or os.path.splitext(os.path.basename(path))[0]
        objs = []
        for m, o in enumerate(raw.get("objects", [])):
            where = f"entry {eid} object {m}"
            if "category" not in o or "box" not in o:
                raise ManifestError(f"{where}: needs category and box")
            sub = o.get("subordinate")
            objs.append(GroundTruth(o["category"], _parse_box(o["box"], where),
                                    bool(o.get("ignore", False)),
                                    None if sub is None else str(sub)))
        entries.append(ManifestEntry(eid, path, objs))
    return DatasetManifest(entries, cats)


def load_manifest(path, check_paths=True):
    with open(path) as fh:
        doc = json.load(fh)
    man = manifest_from_dict(doc, os.path.dirname(os.path.abspath(path)))
    if check_paths:
        missing = [e.path for e in man.entries if not os.path.isfile(e.path)]
        if missing:
            raise ManifestError(f"{len(missing)} image path(s) not found, e.g. {missing[0]}")
    return man


def manifest_to_dict(man, base_dir=None):
    out = []
    for e in man.entries:
        path = e.path
        if base_dir is not None:
            path = os.path.relpath(path, base_dir)
        objs = []
        for o in e.objects:
            d = {"category": o.category, "box": list(o.box.as_tuple()), "ignore": o.ignore}
            if o.subordinate is not None:
                d["subordinate"] = o.subordinate
            objs.append(d)
        out.append({"id": e.id, "path": path, "objects": objs})
    return {"format": MANIFEST_FORMAT, "categories": list(man.categories), "entries": out}


def save_manifest(man, path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w") as fh:
        json.dump(manifest_to_dict(man, base), fh, indent=1)
        fh.write("\n")
