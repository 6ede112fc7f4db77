"""Synthetic glyph scenes with known appearance modes.

A glyph is a dark frame around a 2x2 arrangement of stripe textures. Mode m
uses texture pair ``PAIRS[m // 2]`` in a checkerboard of phase ``m % 2``.
Unlabelled distractors reuse the same textures, either in non-checker layouts
or as checkerboards mixing two modes' textures. Every quadrant of a
distractor looks like some positive's quadrant, so a single linear template
cannot reject them all while per-mode templates can.

With ``texture="fine"`` the interior is a 6x6 tile checkerboard instead, so
modes and distractors agree at coarse resolution and differ only in detail
finer than a root cell.
"""
import json
import math
import os
from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from .dataset import DatasetManifest, GroundTruth, ManifestEntry, save_manifest
from .imaging import BoundingBox, GrayImage, save_pgm

CATEGORY = "glyph"
PAIRS = [("H", "V"), ("D", "A"), ("H", "D"), ("V", "A"), ("H", "A"), ("V", "D")]
MODE_ASPECTS = [1.0, 0.72, 1.38, 0.85, 1.18, 0.62, 1.6, 0.92, 1.08, 0.78, 1.28, 0.68]


@dataclass
class SynthSpec:
    modes: int = 3
    images: int = 200
    width: int = 160
    height: int = 160
    clutter: float = 0.5            # density of background texture blobs
    noise: float = 0.03             # additive Gaussian sigma
    seed: int = 0
    aspect_coupled: bool = False    # all modes share one aspect ratio
    min_size: int = 44
    max_size: int = 60
    positive_fraction: float = 0.5
    max_objects: int = 2
    max_distractors: int = 2
    texture: str = "quadrant"       # "quadrant" | "fine"
    period: float = 6.0
    fine_tiles: int = 6
    mixed_distractors: float = 0.5  # share of quadrant distractors drawn from mixed_layouts

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("modes must be >= 1")
        if self.modes > 2 * len(PAIRS):
            raise ValueError(f"at most {2 * len(PAIRS)} modes are available")
        if self.images < 1:
            raise ValueError("images must be >= 1")
        if self.texture not in ("quadrant", "fine"):
            raise ValueError(f"unknown texture {self.texture!r}")
        if not 8 <= self.min_size <= self.max_size:
            raise ValueError("need 8 <= min_size <= max_size")
        if self.max_size * 1.7 + 4 > min(self.width, self.height):
            raise ValueError("image too small for the glyph size range")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError("positive_fraction must lie in [0, 1]")
        if not 0.0 <= self.mixed_distractors <= 1.0:
            raise ValueError("mixed_distractors must lie in [0, 1]")
        if self.noise < 0 or self.clutter < 0:
            raise ValueError("noise and clutter must be non-negative")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SynthImage:
    id: str
    image: GrayImage
    objects: List[Tuple[BoundingBox, int]]      # (box, mode)
    distractors: List[BoundingBox]


def mode_aspect(spec, m):
    if spec.aspect_coupled:
        return 1.0
    # fine-texture modes of one pair must not differ in shape
    idx = m // 2 if spec.texture == "fine" else m
    return MODE_ASPECTS[idx % len(MODE_ASPECTS)]


def _stripes(kind, ys, xs, period):
    if kind == "H":
        t = ys
    elif kind == "V":
        t = xs
    elif kind == "D":
        t = (xs + ys) / math.sqrt(2.0)
    else:
        t = (xs - ys) / math.sqrt(2.0)
    return 0.5 + 0.4 * np.sin(2.0 * math.pi * t / period)


def _layout(pair, cells, rng, checker_phase=None):
    """Texture name per tile: a checkerboard of the given phase, or a
    distractor layout. Quadrant distractors are any non-checker layout; fine
    distractors alternate by whole rows or columns, which keeps the local mix
    of the two textures equal to a checkerboard's at coarse resolution."""
    n = cells * cells
    ii, jj = np.divmod(np.arange(n), cells)
    if checker_phase is not None:
        sel = (ii + jj + checker_phase) % 2
    elif cells > 2:
        sel = ((ii if rng.random() < 0.5 else jj) + rng.integers(2)) % 2
    else:
        while True:
            sel = rng.integers(0, 2, size=n)
            if not (np.all(sel == (ii + jj) % 2) or np.all(sel == (ii + jj + 1) % 2)):
                break
    return [pair[int(s)] for s in sel], cells


def mixed_layouts(modes):
    """Checkerboards built from the diagonal texture of one mode and the
    anti-diagonal texture of another, excluding the modes' own layouts.

    The mixes of modes i and j add up to modes i and j quadrant by quadrant,
    so a linear template cannot rank both mixes below both modes.
    """
    diag = [(PAIRS[m // 2][m % 2], PAIRS[m // 2][1 - m % 2]) for m in range(modes)]
    own = set(diag)
    out = []
    for i in range(modes):
        for j in range(modes):
            mix = (diag[i][0], diag[j][1])
            if i != j and mix not in own and mix not in out:
                out.append(mix)
    return out


def _mixed_checker(mixes, rng):
    a, b = mixes[int(rng.integers(len(mixes)))]
    return [a, b, b, a], 2


def _paint_glyph(canvas, box, tiles, period):
    names, cells = tiles
    x0, y0, x1, y1 = box.as_tuple()
    w, h = x1 - x0, y1 - y0
    t = max(2, int(round(0.08 * min(w, h))))
    canvas[y0:y1, x0:x1] = 0.08
    ix0, iy0, ix1, iy1 = x0 + t, y0 + t, x1 - t, y1 - t
    ys, xs = np.mgrid[iy0:iy1, ix0:ix1].astype(np.float64)
    edges_x = np.linspace(ix0, ix1, cells + 1)
    edges_y = np.linspace(iy0, iy1, cells + 1)
    cx = np.clip(np.searchsorted(edges_x, xs[0] + 0.5, side="right") - 1, 0, cells - 1)
    cy = np.clip(np.searchsorted(edges_y, ys[:, 0] + 0.5, side="right") - 1, 0, cells - 1)
    out = np.empty_like(ys)
    for idx, name in enumerate(names):
        r, c = divmod(idx, cells)
        mask = (cy[:, None] == r) & (cx[None, :] == c)
        out[mask] = _stripes(name, ys, xs, period)[mask]
    canvas[iy0:iy1, ix0:ix1] = out


def _background(spec, rng):
    h, w = spec.height, spec.width
    # smooth random field plus sparse oriented texture blobs
    coarse = rng.normal(0.0, 1.0, size=(h // 16 + 2, w // 16 + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    field = ((1 - fy) * (1 - fx) * c[y0][:, x0] + (1 - fy) * fx * c[y0][:, x0 + 1]
             + fy * (1 - fx) * c[y0 + 1][:, x0] + fy * fx * c[y0 + 1][:, x0 + 1])
    bg = 0.55 + 0.08 * field
    n_blobs = rng.poisson(spec.clutter * w * h / 4000.0)
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(4, 12)
        kind = "HVDA"[rng.integers(4)]
        mask = (gy - cy) ** 2 + (gx - cx) ** 2 <= r * r
        bg[mask] = 0.5 + 0.6 * (_stripes(kind, gy, gx, rng.uniform(4, 9))[mask] - 0.5)
    return bg


def _place(spec, rng, sizes, taken):
    """Rejection-sample a box of (w, h) disjoint from ``taken`` (with a gap)."""
    w, h = sizes
    margin = 6
    for _ in range(200):
        x0 = int(rng.integers(margin, spec.width - w - margin + 1))
        y0 = int(rng.integers(margin, spec.height - h - margin + 1))
        box = BoundingBox(x0, y0, x0 + w, y0 + h)
        if all(box.x1 + 4 <= t.x0 or t.x1 + 4 <= box.x0 or box.y1 + 4 <= t.y0 or t.y1 + 4 <= box.y0
               for t in taken):
            return box
    return None


def _box_size(spec, rng, aspect):
    s = rng.uniform(spec.min_size, spec.max_size)
    # s is the geometric-mean side, so both aspects keep similar areas
    w = int(round(s * math.sqrt(aspect)))
    h = int(round(s / math.sqrt(aspect)))
    return w, h


def _quantize(a):
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def render_image(spec, index, rng):
    canvas = _background(spec, rng)
    objects, distractors, taken = [], [], []
    if rng.random() < spec.positive_fraction:
        n_obj = int(rng.integers(1, spec.max_objects + 1))
    else:
        n_obj = 0
    n_dis = int(rng.integers(0, spec.max_distractors + 1))
    used_pairs = sorted({m // 2 for m in range(spec.modes)})
    mixes = mixed_layouts(spec.modes) if spec.texture == "quadrant" else []
    for _ in range(n_obj):
        m = int(rng.integers(spec.modes))
        box = _place(spec, rng, _box_size(spec, rng, mode_aspect(spec, m)), taken)
        if box is None:
            continue
        pair = PAIRS[m // 2]
        cells = 2 if spec.texture == "quadrant" else spec.fine_tiles
        _paint_glyph(canvas, box, _layout(pair, cells, rng, checker_phase=m % 2), spec.period)
        taken.append(box)
        objects.append((box, m))
    for _ in range(n_dis):
        j = used_pairs[int(rng.integers(len(used_pairs)))]
        partners = [m for m in range(spec.modes) if m // 2 == j]
        aspect = mode_aspect(spec, partners[int(rng.integers(len(partners)))])
        box = _place(spec, rng, _box_size(spec, rng, aspect), taken)
        if box is None:
            continue
        if mixes and rng.random() < spec.mixed_distractors:
            tiles = _mixed_checker(mixes, rng)
        else:
            cells = 2 if spec.texture == "quadrant" else spec.fine_tiles
            tiles = _layout(PAIRS[j], cells, rng)
        _paint_glyph(canvas, box, tiles, spec.period)
        taken.append(box)
        distractors.append(box)
    if spec.noise > 0:
        canvas = canvas + rng.normal(0.0, spec.noise, size=canvas.shape)
    return SynthImage(f"img{index:05d}", GrayImage(_quantize(canvas)), objects, distractors)


def generate(spec):
    """All images of ``spec``; image i depends only on (seed, i)."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.images)
    return [render_image(spec, i, np.random.default_rng(c)) for i, c in enumerate(children)]


def to_manifest(images, image_dir=None):
    entries = []
    for s in images:
        path = os.path.join(image_dir, s.id + ".pgm") if image_dir else s.id + ".pgm"
        objs = [GroundTruth(CATEGORY, box, False, f"mode{m}") for box, m in s.objects]
        entries.append(ManifestEntry(s.id, path, objs, image=s.image))
    return DatasetManifest(entries, [CATEGORY])


def write_synth(spec, out_dir):
    """Render ``spec`` to ``out_dir`` as PGM images plus manifest.json; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    images = generate(spec)
    for s in images:
        save_pgm(s.image, os.path.join(out_dir, s.id + ".pgm"))
    man = to_manifest(images, out_dir)
    path = os.path.join(out_dir, "manifest.json")
    save_manifest(man, path)
    with open(os.path.join(out_dir, "synth_spec.json"), "w") as fh:
        json.dump(asdict(spec), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path
