import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from visubcat.features import (GIST_DIM, GistDescriptor, build_pyramid, gist, hog,
                               window_feature)
from visubcat.imaging import BoundingBox, GrayImage, crop_warp


def naive_hog(pix, cs):
    """Per-pixel reference: centred gradients, 18 signed bins, bilinear cells,
    four-block normalisation with 0.2 truncation."""
    h, w = pix.shape
    by, bx = h // cs, w // cs
    hist = np.zeros((by, bx, 18))
    for y in range(1, by * cs - 1):
        for x in range(1, bx * cs - 1):
            dx = pix[y, x + 1] - pix[y, x - 1]
            dy = pix[y + 1, x] - pix[y - 1, x]
            mag = math.hypot(dx, dy)
            if mag == 0:
                continue
            ang = math.atan2(dy, dx) % (2 * math.pi)
            o = ang / (2 * math.pi) * 18
            lo = int(o) % 18
            fo = o - int(o)
            cy, cx = (y + 0.5) / cs - 0.5, (x + 0.5) / cs - 0.5
            for yy in (math.floor(cy), math.floor(cy) + 1):
                for xx in (math.floor(cx), math.floor(cx) + 1):
                    if 0 <= yy < by and 0 <= xx < bx:
                        wgt = (1 - abs(cy - yy)) * (1 - abs(cx - xx)) * mag
                        hist[yy, xx, lo] += wgt * (1 - fo)
                        hist[yy, xx, (lo + 1) % 18] += wgt * fo
    energy = np.array([[sum((hist[y, x, o] + hist[y, x, o + 9]) ** 2 for o in range(9))
                        for x in range(bx)] for y in range(by)])
    out = np.zeros((by - 2, bx - 2, 31))
    for y in range(1, by - 1):
        for x in range(1, bx - 1):
            norms = []
            for oy, ox in ((0, 0), (-1, 0), (0, -1), (-1, -1)):
                e = sum(energy[y + oy + a, x + ox + b] for a in (0, 1) for b in (0, 1))
                norms.append(1 / math.sqrt(e + 1e-4))
            f = out[y - 1, x - 1]
            for o in range(18):
                parts = [min(hist[y, x, o] * n, 0.2) for n in norms]
                f[o] = 0.5 * sum(parts)
                for j in range(4):
                    f[27 + j] += 0.2357 * parts[j]
            for o in range(9):
                v = hist[y, x, o] + hist[y, x, o + 9]
                f[18 + o] = 0.5 * sum(min(v * n, 0.2) for n in norms)
    return out


def test_hog_shape_and_constant(each_backend):
    g = hog(GrayImage(np.full((40, 56), 0.6)), 8)
    assert (g.cells_y, g.cells_x, g.dim) == (3, 5, 31)
    assert np.all(g.values == 0.0)


def test_hog_too_small():
    with pytest.raises(ValueError):
        hog(GrayImage(np.zeros((23, 40))), 8)


def test_hog_matches_naive_oracle(each_backend, rng):
    pix = rng.random((37, 45))
    assert np.max(np.abs(hog(GrayImage(pix), 8).values - naive_hog(pix, 8))) <= 1e-9
    assert np.max(np.abs(hog(GrayImage(pix), 4).values - naive_hog(pix, 4))) <= 1e-9


def test_vertical_edge_energy_in_horizontal_gradient_bins(each_backend):
    pix = np.zeros((40, 40))
    pix[:, 20:] = 1.0
    g = hog(GrayImage(pix), 8).values
    assert np.max(np.abs(g - naive_hog(pix, 8))) <= 1e-6
    signed = g[:, :, :18].sum(axis=(0, 1))
    # gradient points along +x: angle 0, i.e. bin 0
    assert signed[0] > 0 and signed[0] >= 0.99 * signed.sum()


def test_translation_by_one_cell(each_backend, rng):
    pix = rng.random((64, 72))
    a = hog(GrayImage(pix[:, 8:]), 8).values
    b = hog(GrayImage(pix[:, :-8]), 8).values
    # a's cell j sits where b's cell j + 1 does; cells whose normalisation
    # reaches a histogram cell on either image border are excluded
    assert a.shape == b.shape == (6, 6, 31)
    assert np.max(np.abs(a[:, 1:4] - b[:, 2:5])) <= 1e-9


@given(seed=st.integers(0, 2**31), w=st.integers(24, 60), h=st.integers(24, 60))
def test_hog_bounds(seed, w, h):
    pix = np.random.default_rng(seed).random((h, w))
    pix[pix < 0.3] = 0.0
    g = hog(GrayImage(pix), 8).values
    assert np.all(np.isfinite(g))
    assert np.all(g >= 0.0)
    # each of the 27 orientation channels averages 4 truncated copies, times 2
    assert np.all(g[:, :, :27] <= 0.2 * 2 + 1e-12)


def test_pyramid_interval_one():
    pyr = build_pyramid(GrayImage(np.random.default_rng(1).random((64, 64))), 8, 1)
    scales = [lv.scale for lv in pyr.levels]
    assert scales[0] == 2.0 and scales[:3] == [2.0, 1.0, 0.5]
    for lv in pyr.levels:
        side = math.floor(64 * lv.scale + 0.5)
        assert lv.grid.cells_x == side // 8 - 2 and lv.grid.cells_y == side // 8 - 2


@given(w=st.integers(24, 120), h=st.integers(24, 120), interval=st.integers(1, 5))
def test_pyramid_scales_decrease(w, h, interval):
    pyr = build_pyramid(GrayImage(np.zeros((h, w))), 8, interval)
    scales = [lv.scale for lv in pyr.levels]
    assert len(scales) >= 1 and scales[0] == 2.0
    assert all(a > b for a, b in zip(scales, scales[1:]))
    for i in range(interval, len(scales)):
        assert pyr.fine_level(i) == i - interval
        assert scales[i - interval] == pytest.approx(2 * scales[i])


def test_pyramid_tiny_window_image_has_a_level():
    # a 24x24 image at scale 2 yields 4x4 cells, i.e. a 4x4 window fits
    pyr = build_pyramid(GrayImage(np.zeros((24, 24))), 8, 4, min_cells=(4, 4))
    assert len(pyr.levels) >= 1


def test_pyramid_threads_identical(rng):
    img = GrayImage(rng.random((70, 90)))
    a = build_pyramid(img, 8, 3, threads=1)
    b = build_pyramid(img, 8, 3, threads=3)
    assert all(np.array_equal(x.grid.values, y.grid.values) for x, y in zip(a.levels, b.levels))


def test_window_feature_composition(each_backend, rng):
    img = GrayImage(rng.random((80, 90)))
    box = BoundingBox(13.5, 9.25, 61, 47)
    f = window_feature(img, box, 5, 4, 8)
    assert f.shape == (5 * 4 * 31,)
    ctx = BoundingBox(box.x0 - box.width / 5, box.y0 - box.height / 4,
                      box.x1 + box.width / 5, box.y1 + box.height / 4)
    patch = crop_warp(img, ctx, 7 * 8, 6 * 8)
    ref = naive_hog(patch.pixels, 8)
    assert np.max(np.abs(f - ref.reshape(-1))) <= 1e-9


def test_window_feature_identity_warp(rng):
    img = GrayImage(rng.random((64, 64)))
    # box of exactly 4x3 cells whose context ring lies inside the image
    f = window_feature(img, BoundingBox(16, 16, 48, 40), 4, 3, 8)
    plain = hog(GrayImage(img.pixels[8:48, 8:56]), 8).values
    assert np.max(np.abs(f - plain.reshape(-1))) <= 1e-9


def test_window_feature_length_fixed(rng):
    img = GrayImage(rng.random((100, 100)))
    a = window_feature(img, BoundingBox(5, 5, 30, 60), 3, 5)
    b = window_feature(img, BoundingBox(20, 10, 95, 40), 3, 5)
    assert a.shape == b.shape == (3 * 5 * 31,)
    with pytest.raises(ValueError):
        window_feature(img, BoundingBox(5, 5, 30, 60), 1, 5)


def test_gist_basics(rng):
    assert np.max(np.abs(gist(GrayImage(np.full((50, 60), 0.4))).values)) <= 1e-9
    pix = rng.random((64, 80)) * 0.5
    a = gist(GrayImage(pix)).values
    b = gist(GrayImage(2 * pix)).values
    assert a.size == GIST_DIM == 3200
    assert np.max(np.abs(b - 2 * a)) <= 1e-9 * max(1.0, np.abs(b).max())
    with pytest.raises(ValueError):
        gist(GrayImage(np.zeros((31, 64))))
    with pytest.raises(ValueError):
        GistDescriptor(np.zeros(10))
