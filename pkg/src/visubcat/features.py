"""HOG grids, feature pyramids, fixed-size window descriptors and GIST."""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import List

import numpy as np

from . import kernels
from .imaging import BoundingBox, crop_warp, resize, resize_to

HOG_DIM = kernels.HOG_DIM

GIST_SIZE = 128
GIST_GRID = 10
GIST_ORIENTATIONS = 8
GIST_SCALES = 4
GIST_DIM = GIST_GRID * GIST_GRID * GIST_ORIENTATIONS * GIST_SCALES


@dataclass
class FeatureGrid:
    """Per-cell feature vectors stored as a (cells_y, cells_x, dim) array."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("feature grid must be 3-D (cells_y, cells_x, dim)")

    @property
    def cells_x(self):
        return self.values.shape[1]

    @property
    def cells_y(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]


@dataclass
class PyramidLevel:
    scale: float          # nominal 2 * 2**(-i/interval)
    grid: FeatureGrid
    scale_x: float        # realised width ratio after integer rounding
    scale_y: float


@dataclass
class FeaturePyramid:
    levels: List[PyramidLevel]
    cell_size: int
    interval: int
    image_width: int
    image_height: int

    def fine_level(self, index):
        """Index of the level exactly one octave finer than ``index``, if any."""
        j = index - self.interval
        return j if j >= 0 else None


def hog(img, cell_size=8):
    """31-channel HOG grid of ``img``.

    Per cell: 18 signed and 9 unsigned orientation channels, each the mean of
    four block-normalised and 0.2-truncated copies, plus 4 block-energy
    channels. The outermost ring of cells only feeds normalisation and is not
    returned, so the grid is (floor(h/cs) - 2) x (floor(w/cs) - 2).
    """
    cell_size = int(cell_size)
    if cell_size < 1:
        raise ValueError("cell_size must be >= 1")
    if img.width // cell_size < 3 or img.height // cell_size < 3:
        raise ValueError(
            f"{img.width}x{img.height} image is too small for HOG at cell size {cell_size}"
            f" (needs at least {3 * cell_size} pixels per side)")
    return FeatureGrid(kernels.hog_features(img.pixels, cell_size))


def _level_grid(img, scale, cell_size):
    scaled = resize(img, scale)
    return scaled, hog(scaled, cell_size)


def build_pyramid(img, cell_size=8, interval=4, min_cells=(1, 1), threads=1):
    """Multi-scale HOG pyramid with scales 2 * 2**(-i/interval), finest first.

    Level 0 is the doubled-resolution octave, so the level ``interval`` steps
    above any level is exactly twice as fine. Levels stop once the grid is
    smaller than ``min_cells`` (height, width).
    """
    if interval < 1:
        raise ValueError("interval must be >= 1")
    min_h, min_w = max(1, int(min_cells[0])), max(1, int(min_cells[1]))
    scales = []
    i = 0
    while True:
        s = 2.0 * 2.0 ** (-i / interval)
        w = math.floor(img.width * s + 0.5)
        h = math.floor(img.height * s + 0.5)
        if w // cell_size - 2 < min_w or h // cell_size - 2 < min_h:
            break
        scales.append(s)
        i += 1
    if threads > 1 and len(scales) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: _level_grid(img, s, cell_size), scales))
    else:
        results = [_level_grid(img, s, cell_size) for s in scales]
    levels = [PyramidLevel(s, grid, scaled.width / img.width, scaled.height / img.height)
              for s, (scaled, grid) in zip(scales, results)]
    return FeaturePyramid(levels, cell_size, interval, img.width, img.height)


def window_feature(img, box, canon_w_cells, canon_h_cells, cell_size=8):
    """Warp ``box`` to a canonical cell grid and return its flattened HOG.

    The box is grown by one canonical cell on every side before warping; that
    context ring is what HOG consumes for its border normalisation, so the
    output covers exactly the box and has canon_h * canon_w * 31 entries.
    """
    if canon_w_cells < 2 or canon_h_cells < 2:
        raise ValueError("canonical window must be at least 2x2 cells")
    if not isinstance(box, BoundingBox):
        box = BoundingBox(*box)
    ctx = box.expanded(box.width / canon_w_cells, box.height / canon_h_cells)
    patch = crop_warp(img, ctx, (canon_w_cells + 2) * cell_size, (canon_h_cells + 2) * cell_size)
    grid = hog(patch, cell_size)
    return grid.values.reshape(-1)


# -------------------------------------------------------------------- GIST


@dataclass
class GistDescriptor:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != GIST_DIM:
            raise ValueError(f"GIST descriptor must have {GIST_DIM} entries, got {self.values.size}")


@lru_cache(maxsize=4)
def gist_filter_bank(size=GIST_SIZE):
    """Frequency responses of the even Gabor bank, shape (scales, orientations, n, n).

    Scale s is centred at 0.25 / 2**s cycles/pixel with a one-octave
    half-amplitude radial bandwidth; orientations are k * pi / 8. Each
    response is a pair of Gaussians mirrored through the origin (real, even
    kernel) with the DC term zeroed (zero-mean kernel).
    """
    f = np.fft.fftfreq(size)
    fx, fy = np.meshgrid(f, f)
    radial = (math.sqrt(2.0) - 1.0 / math.sqrt(2.0)) / 2.0 / math.sqrt(2.0 * math.log(2.0))
    angular = math.tan(math.pi / (2 * GIST_ORIENTATIONS)) / math.sqrt(2.0 * math.log(2.0))
    bank = np.empty((GIST_SCALES, GIST_ORIENTATIONS, size, size))
    for s in range(GIST_SCALES):
        f0 = 0.25 / 2.0 ** s
        sr, st = radial * f0, angular * f0
        for o in range(GIST_ORIENTATIONS):
            th = o * math.pi / GIST_ORIENTATIONS
            u = fx * math.cos(th) + fy * math.sin(th)
            v = -fx * math.sin(th) + fy * math.cos(th)
            tang = np.exp(-v * v / (2.0 * st * st))
            h = (np.exp(-(u - f0) ** 2 / (2.0 * sr * sr))
                 + np.exp(-(u + f0) ** 2 / (2.0 * sr * sr))) * tang
            h[0, 0] = 0.0
            bank[s, o] = h
    bank.setflags(write=False)
    return bank


def _grid_edges(n, bins):
    return [math.floor(i * n / bins + 0.5) for i in range(bins + 1)]


def gist(img):
    """3200-entry GIST: mean |even Gabor response| on a 10x10 grid, 8 orientations x 4 scales.

    Layout is scale-major, then orientation, then grid cell in row-major order.
    """
    if img.width < 32 or img.height < 32:
        raise ValueError(f"GIST needs at least a 32x32 image, got {img.width}x{img.height}")
    pix = resize_to(img, GIST_SIZE, GIST_SIZE).pixels
    spec = np.fft.fft2(pix)
    bank = gist_filter_bank(GIST_SIZE)
    edges = _grid_edges(GIST_SIZE, GIST_GRID)
    out = np.empty((GIST_SCALES, GIST_ORIENTATIONS, GIST_GRID, GIST_GRID))
    for s in range(GIST_SCALES):
        for o in range(GIST_ORIENTATIONS):
            resp = np.abs(np.fft.ifft2(spec * bank[s, o]).real)
            rows = np.add.reduceat(resp, edges[:-1], axis=0)
            cells = np.add.reduceat(rows, edges[:-1], axis=1)
            sizes = np.diff(edges)
            out[s, o] = cells / np.outer(sizes, sizes)
    return GistDescriptor(out.reshape(-1))
