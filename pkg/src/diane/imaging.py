"""Grayscale raster primitives: PGM codec, resizing, equalization, integral images.

Everything downstream (detection, recognition, streaming payloads) trades in
8-bit single-channel images, so this module is the pixel currency of the
whole service. All operations are pure functions over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_WHITESPACE = b" \t\n\r\x0b\x0c"


class PgmError(ValueError):
    """Base class for PGM codec failures."""


class MalformedHeader(PgmError):
    """Missing P5 magic, unreadable or non-positive dimensions."""


class TruncatedPayload(PgmError):
    """Fewer pixel bytes than the header promises."""


class UnsupportedMaxval(PgmError):
    """Header maxval above 255 (16-bit samples are not supported)."""


class OutOfBounds(ValueError):
    """A rectangle reaches outside the raster it is evaluated against."""


class GrayImage:
    """8-bit single-channel raster, row-major, at least 1x1 pixels."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        a = np.asarray(pixels)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-d pixel array, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"image must be at least 1x1, got shape {a.shape}")
        if a.dtype != np.uint8:
            if a.size and (a.min() < 0 or a.max() > 255):
                raise ValueError("pixel values must lie in 0..255")
            a = a.astype(np.uint8)
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        self.pixels = a

    @classmethod
    def from_flat(cls, width: int, height: int, data) -> "GrayImage":
        """Build from row-major flat data of length width*height."""
        flat = np.asarray(data)
        if flat.size != width * height:
            raise ValueError(
                f"data length {flat.size} != {width}x{height}"
            )
        return cls(flat.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle; zero-area rectangles are rejected."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rect offsets must be >= 0, got ({self.x},{self.y})")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect extents must be >= 1, got ({self.w},{self.h})")

    @property
    def area(self) -> int:
        return self.w * self.h

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


class IntegralImage:
    """Summed-area table: sums[y][x] covers pixels strictly above-left of (x,y)."""

    __slots__ = ("sums",)

    def __init__(self, sums):
        self.sums = sums  # (height+1, width+1) int64, zero top row and left column

    @property
    def width(self) -> int:
        return self.sums.shape[1] - 1

    @property
    def height(self) -> int:
        return self.sums.shape[0] - 1


def decode_pgm(data: bytes) -> GrayImage:
    """Decode a binary (P5) PGM file.

    Header comments ('#' to end of line) are allowed; maxval must be <= 255.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise TypeError("decode_pgm expects bytes")
    data = bytes(data)
    if data[:2] != b"P5":
        raise MalformedHeader("missing P5 magic")
    i = 2
    tokens = []
    n = len(data)
    while len(tokens) < 3:
        if i >= n:
            raise MalformedHeader("header ended before width/height/maxval")
        c = data[i : i + 1]
        if c == b"#":
            nl = data.find(b"\n", i)
            i = n if nl < 0 else nl + 1
        elif c in _WHITESPACE:
            i += 1
        else:
            j = i
            while j < n and data[j : j + 1] not in _WHITESPACE and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= n or data[i : i + 1] not in _WHITESPACE:
        raise MalformedHeader("expected single whitespace after maxval")
    i += 1  # exactly one whitespace byte separates header and payload
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedHeader(f"non-numeric header fields {tokens!r}") from None
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise UnsupportedMaxval(f"maxval {maxval} > 255")
    if maxval < 1:
        raise MalformedHeader(f"bad maxval {maxval}")
    payload = data[i : i + width * height]
    if len(payload) < width * height:
        raise TruncatedPayload(
            f"expected {width * height} pixel bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels)


def encode_pgm(img: GrayImage) -> bytes:
    """Encode as binary PGM; decode_pgm(encode_pgm(img)) == img."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.tobytes()


def resize_bilinear(img: GrayImage, w: int, h: int) -> GrayImage:
    """Resize with bilinear interpolation over half-pixel-center mapping.

    Output pixel (x, y) samples source coordinate ((x+0.5)*sw/w - 0.5,
    (y+0.5)*sh/h - 0.5), clamped to the source raster, rounded half-up.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target size must be >= 1x1, got {w}x{h}")
    sh, sw = img.pixels.shape
    src = img.pixels.astype(np.float64)
    xs = np.clip((np.arange(w) + 0.5) * (sw / w) - 0.5, 0.0, sw - 1.0)
    ys = np.clip((np.arange(h) + 0.5) * (sh / h) - 0.5, 0.0, sh - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = xs - x0
    fy = ys - y0
    wx0, wx1 = (1.0 - fx)[None, :], fx[None, :]
    wy0, wy1 = (1.0 - fy)[:, None], fy[:, None]
    out = (
        src[np.ix_(y0, x0)] * wy0 * wx0
        + src[np.ix_(y0, x1)] * wy0 * wx1
        + src[np.ix_(y1, x0)] * wy1 * wx0
        + src[np.ix_(y1, x1)] * wy1 * wx1
    )
    out = np.clip(np.floor(out + 0.5), 0, 255)
    return GrayImage(out.astype(np.uint8))


def equalize_histogram(img: GrayImage) -> GrayImage:
    """Cumulative-histogram equalization; a constant image is returned as-is."""
    flat = img.pixels.ravel()
    hist = np.bincount(flat, minlength=256)
    cdf = np.cumsum(hist)
    n = flat.size
    cdf_min = int(cdf[np.flatnonzero(hist)[0]])
    if cdf_min == n:  # single gray level: the mapping degenerates
        return GrayImage(img.pixels)
    lut = np.floor(255.0 * (cdf - cdf_min) / (n - cdf_min) + 0.5)
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return GrayImage(lut[img.pixels])


def integral_image(img: GrayImage) -> IntegralImage:
    """Summed-area table over raw pixel values."""
    return _integral(img.pixels.astype(np.int64))


def squared_integral_image(img: GrayImage) -> IntegralImage:
    """Summed-area table over squared pixel values (for window variance)."""
    p = img.pixels.astype(np.int64)
    return _integral(p * p)


def _integral(values: np.ndarray) -> IntegralImage:
    h, w = values.shape
    sums = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(values, axis=0), axis=1, out=sums[1:, 1:])
    sums.setflags(write=False)
    return IntegralImage(sums)


def rect_sum(ii: IntegralImage, r: Rect) -> int:
    """Exact pixel sum over r in O(1); raises OutOfBounds if r leaves the raster."""
    if r.x + r.w > ii.width or r.y + r.h > ii.height:
        raise OutOfBounds(
            f"rect {r} outside {ii.width}x{ii.height} raster"
        )
    s = ii.sums
    return int(
        s[r.y + r.h, r.x + r.w]
        - s[r.y, r.x + r.w]
        - s[r.y + r.h, r.x]
        + s[r.y, r.x]
    )


def crop(img: GrayImage, r: Rect) -> GrayImage:
    """Copy the sub-raster covered by r."""
    if r.x + r.w > img.width or r.y + r.h > img.height:
        raise OutOfBounds(f"rect {r} outside {img.width}x{img.height} image")
    return GrayImage(img.pixels[r.y : r.y + r.h, r.x : r.x + r.w].copy())
