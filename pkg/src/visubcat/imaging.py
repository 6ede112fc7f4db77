"""Grayscale rasters, boxes, PGM/PPM decoding and bilinear resampling."""
import math
import os
from dataclasses import dataclass

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImageFormatError(ValueError):
    """Base class for undecodable image files."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedImageError(ImageFormatError):
    pass


class GrayImage:
    """Luminance raster with values in [0, 1], stored as a (height, width) array."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr.setflags(write=False)
        self.pixels = arr

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def data(self):
        """Row-major flat view of the pixel values."""
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; (x0, y0) inclusive top-left, (x1, y1) exclusive bottom-right."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate box {vals}")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    @property
    def aspect(self):
        """Width over height."""
        return self.width / self.height

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def expanded(self, dx, dy):
        return BoundingBox(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy)


# ------------------------------------------------------------------ PNM IO


def _read_header_tokens(buf, count, path):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos] in b" \t\r\n":
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise MalformedHeaderError(f"{path}: header ends prematurely")
        start = pos
        while pos < n and buf[pos] not in b" \t\r\n#":
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= n or buf[pos] not in b" \t\r\n":
        # payload must be separated from the header by exactly one whitespace byte
        if pos < n:
            raise MalformedHeaderError(f"{path}: missing whitespace after header")
        return tokens, pos
    return tokens, pos + 1


def load_image(path):
    """Decode a plain or binary PGM/PPM (maxval 255) into a GrayImage.

    Colour pixels are reduced to luminance with fixed ITU-R 601 weights.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"image not found: {path}")
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 2 or buf[:1] != b"P" or buf[1:2] not in b"2356":
        raise MalformedHeaderError(f"{path}: not a PGM/PPM file")
    magic = buf[:2].decode()
    tokens, offset = _read_header_tokens(buf[2:], 3, path)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedHeaderError(f"{path}: non-integer header field") from None
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise MalformedHeaderError(f"{path}: only maxval 255 is supported (got {maxval})")
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels

    if magic in ("P5", "P6"):
        payload = buf[offset:offset + count]
        if len(payload) < count:
            raise TruncatedImageError(
                f"{path}: expected {count} payload bytes, found {len(payload)}")
        raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        fields = buf[offset:].split()
        if len(fields) < count:
            raise TruncatedImageError(
                f"{path}: expected {count} samples, found {len(fields)}")
        try:
            raw = np.array([int(f) for f in fields[:count]], dtype=np.float64)
        except ValueError:
            raise ImageFormatError(f"{path}: non-integer sample in payload") from None
        if raw.min() < 0 or raw.max() > maxval:
            raise ImageFormatError(f"{path}: sample outside [0, {maxval}]")

    if channels == 3:
        rgb = raw.reshape(height, width, 3)
        lum = (LUMA_WEIGHTS[0] * rgb[..., 0] + LUMA_WEIGHTS[1] * rgb[..., 1]
               + LUMA_WEIGHTS[2] * rgb[..., 2])
        pixels = lum / 255.0
    else:
        pixels = raw.reshape(height, width) / 255.0
    return GrayImage(np.clip(pixels, 0.0, 1.0))


def save_pgm(img, path):
    """Write a binary PGM; values are quantised to round(255 * v)."""
    q = np.floor(img.pixels * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + q.tobytes())


# -------------------------------------------------------------- resampling


def _axis_samples(coords, n):
    coords = np.clip(coords, 0.0, n - 1)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, coords - lo


def _sample_grid(pix, ys, xs):
    y0, y1, fy = _axis_samples(ys, pix.shape[0])
    x0, x1, fx = _axis_samples(xs, pix.shape[1])
    # a + f * (b - a) keeps constants exact
    top = pix[y0][:, x0] + fx[None, :] * (pix[y0][:, x1] - pix[y0][:, x0])
    bot = pix[y1][:, x0] + fx[None, :] * (pix[y1][:, x1] - pix[y1][:, x0])
    out = top + fy[:, None] * (bot - top)
    return np.clip(out, 0.0, 1.0)


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def resize_to(img, width, height):
    """Bilinear resample of the whole image to an explicit size."""
    if width < 1 or height < 1:
        raise ValueError(f"output size {width}x{height} is empty")
    xs = (np.arange(width) + 0.5) * (img.width / width) - 0.5
    ys = (np.arange(height) + 0.5) * (img.height / height) - 0.5
    return GrayImage(_sample_grid(img.pixels, ys, xs))


def resize(img, factor):
    """Bilinear resize by ``factor``; output dims are round(input dims * factor)."""
    if not (factor > 0) or not math.isfinite(factor):
        raise ValueError(f"resize factor must be positive, got {factor}")
    w = _round_half_up(img.width * factor)
    h = _round_half_up(img.height * factor)
    if w < 1 or h < 1:
        raise ValueError(f"resize by {factor} empties a {img.width}x{img.height} image")
    if w == img.width and h == img.height:
        return img
    return resize_to(img, w, h)


def crop_warp(img, box, target_w, target_h):
    """Resample the region under ``box`` to ``target_w`` x ``target_h`` pixels.

    Samples falling outside the image take the nearest border pixel.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be positive")
    if box.x1 <= 0 or box.y1 <= 0 or box.x0 >= img.width or box.y0 >= img.height:
        raise ValueError(f"box {box.as_tuple()} lies outside the {img.width}x{img.height} image")
    xs = box.x0 + (np.arange(target_w) + 0.5) * (box.width / target_w) - 0.5
    ys = box.y0 + (np.arange(target_h) + 0.5) * (box.height / target_h) - 0.5
    return GrayImage(_sample_grid(img.pixels, ys, xs))
