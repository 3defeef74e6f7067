"""Image and label-map ingestion, normalization, serialization, and rendering.

Intensities are always unit-interval floats; 8-bit rasters are scaled by
1/255 on load so downstream similarity constants can assume a dynamic
range of 1. Label maps have their own tiny binary container (see
LABEL_MAP_MAGIC) so segmentations round-trip bit-exactly.
"""

from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import (
    BadMagicError,
    CorruptDataError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedFormatError,
    ZeroDimensionError,
)

LABEL_MAP_MAGIC = b"CUTSLBL1"

# Fixed render palette: 256 evenly spaced hues, shuffled once with a
# constant seed so renders are reproducible across runs and machines.
_PALETTE_SEED = 0xC0105


@dataclass(frozen=True)
class Image:
    """H x W x C grid of intensities in [0, 1]; C is 1 or 3.

    ``data`` is a float array of shape (height, width, channels).
    """

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3:
            raise ShapeMismatchError(f"image data must be (H, W, C), got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ShapeMismatchError("image must have height >= 1 and width >= 1")
        if d.shape[2] not in (1, 3):
            raise ShapeMismatchError(f"channel count must be 1 or 3, got {d.shape[2]}")
        if not np.issubdtype(d.dtype, np.floating):
            raise ShapeMismatchError(f"image data must be floating point, got {d.dtype}")
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite intensities")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_array(cls, arr, dtype=np.float32) -> "Image":
        """Wrap an array as an Image; 2-D input becomes single-channel."""
        a = np.asarray(arr, dtype=dtype)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls(np.ascontiguousarray(a))


@dataclass(frozen=True)
class LabelMap:
    """H x W grid of non-negative integer cluster labels."""

    labels: np.ndarray

    def __post_init__(self):
        l = self.labels
        if l.ndim != 2:
            raise ShapeMismatchError(f"label map must be 2-D, got shape {l.shape}")
        if not np.issubdtype(l.dtype, np.integer):
            raise ShapeMismatchError(f"labels must be integers, got {l.dtype}")
        if l.size and l.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def from_array(cls, arr) -> "LabelMap":
        return cls(np.ascontiguousarray(np.asarray(arr, dtype=np.int64)))


@dataclass(frozen=True)
class BinaryMask:
    """H x W boolean grid; True marks foreground."""

    bits: np.ndarray

    def __post_init__(self):
        b = self.bits
        if b.ndim != 2:
            raise ShapeMismatchError(f"mask must be 2-D, got shape {b.shape}")
        if b.dtype != np.bool_:
            raise ShapeMismatchError(f"mask must be boolean, got {b.dtype}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        return cls(np.ascontiguousarray(np.asarray(arr).astype(bool)))


def load_image(path) -> Image:
    """Load an 8-bit PNG/PGM/PPM file and scale intensities into [0, 1].

    Grayscale files become single-channel, RGB files three-channel.
    Raises FileNotFoundError, UnsupportedFormatError or CorruptDataError.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such image file: {p}")
    try:
        with PILImage.open(p) as im:
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise UnsupportedFormatError(
                    f"{p}: unsupported pixel mode {mode!r} (need 8-bit grayscale or RGB)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as e:
        raise UnsupportedFormatError(f"{p}: not a recognized raster file") from e
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptDataError(f"{p}: failed to decode ({e})") from e
    data = arr.astype(np.float32) / np.float32(255.0)
    if data.ndim == 2:
        data = data[:, :, None]
    return Image(np.ascontiguousarray(data))


def save_image(img: Image, path) -> None:
    """Write an Image as an 8-bit PNG (grayscale for c=1, RGB for c=3)."""
    q = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    if img.channels == 1:
        pil = PILImage.fromarray(q[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(q, mode="RGB")
    pil.save(Path(path), format="PNG")


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resize with align-corners sampling; channels preserved.

    Same-size calls return a bit-identical copy, and outputs never leave
    the input value range.
    """
    if out_h < 1 or out_w < 1:
        raise ZeroDimensionError(f"requested size {out_h}x{out_w} has empty dimension")
    h, w = img.height, img.width
    if out_h == h and out_w == w:
        return Image(img.data.copy())

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=np.float64)
        return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))

    ys = axis_coords(h, out_h)
    xs = axis_coords(w, out_w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    d = img.data.astype(np.float64)
    top = d[y0][:, x0] * (1 - fx) + d[y0][:, x1] * fx
    bot = d[y1][:, x0] * (1 - fx) + d[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    out = np.clip(out, img.data.min(), img.data.max())
    return Image(np.ascontiguousarray(out.astype(img.data.dtype)))


def write_label_map(lm: LabelMap, path) -> None:
    """Serialize a LabelMap: magic, u32le height, u32le width, u32le labels."""
    if lm.labels.size and lm.labels.max() > 0xFFFFFFFF:
        raise ValueError("label ids exceed u32 range")
    payload = lm.labels.astype("<u4").tobytes(order="C")
    with open(Path(path), "wb") as f:
        f.write(LABEL_MAP_MAGIC)
        f.write(struct.pack("<II", lm.height, lm.width))
        f.write(payload)


def read_label_map(path) -> LabelMap:
    """Read a label-map file written by :func:`write_label_map`."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such label-map file: {p}")
    blob = p.read_bytes()
    if len(blob) < len(LABEL_MAP_MAGIC):
        raise TruncatedFileError(f"{p}: shorter than the magic header")
    if blob[: len(LABEL_MAP_MAGIC)] != LABEL_MAP_MAGIC:
        raise BadMagicError(f"{p}: bad magic {blob[:8]!r}")
    if len(blob) < len(LABEL_MAP_MAGIC) + 8:
        raise TruncatedFileError(f"{p}: missing size header")
    h, w = struct.unpack_from("<II", blob, len(LABEL_MAP_MAGIC))
    if h < 1 or w < 1:
        raise CorruptDataError(f"{p}: degenerate size {h}x{w}")
    start = len(LABEL_MAP_MAGIC) + 8
    need = h * w * 4
    if len(blob) - start < need:
        raise TruncatedFileError(f"{p}: payload shorter than {h}x{w} labels")
    if len(blob) - start > need:
        raise CorruptDataError(f"{p}: trailing bytes after payload")
    labels = np.frombuffer(blob, dtype="<u4", count=h * w, offset=start)
    return LabelMap(labels.astype(np.int64).reshape(h, w))


def _build_palette() -> np.ndarray:
    hues = np.arange(256) / 256.0
    rgb = np.array(
        [colorsys.hsv_to_rgb(h, 0.82, 0.96) for h in hues], dtype=np.float32
    )
    order = np.random.default_rng(_PALETTE_SEED).permutation(256)
    return rgb[order]


_PALETTE = _build_palette()


def render_label_map(lm: LabelMap) -> Image:
    """Map each label to a fixed distinct color (label id mod 256)."""
    rgb = _PALETTE[lm.labels % 256]
    return Image(np.ascontiguousarray(rgb))
