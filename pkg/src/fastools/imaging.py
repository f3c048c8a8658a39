"""Deterministic 8-bit raster primitives shared by every visual tool.

Conventions, fixed once here so operator outputs are bit-reproducible:

* images are row-major uint8, grayscale ``(H, W)`` or RGB ``(H, W, 3)``;
* all float->uint8 conversions round half up (``floor(x + 0.5)``);
* bilinear resampling uses half-pixel centers: destination pixel ``d`` maps
  to source coordinate ``(d + 0.5) * src/dst - 0.5``, clamped to the valid
  range, so resizing to identical dimensions is the identity;
* grayscale conversion is BT.601 luma (0.299 R + 0.587 G + 0.114 B);
* float fields are displayed via min-max quantization to [0, 255], with a
  constant field mapping to all zeros.

Codecs (PNG, binary PPM/PGM) are delegated to Pillow; everything math-like
is implemented here.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidArgument, IoError, NonFiniteError

_SUPPORTED_FORMATS = {"PNG", "PPM"}  # Pillow reports PGM/PPM both as "PPM"


def round_half_up(a: np.ndarray | float) -> np.ndarray | float:
    """Round to nearest integer with ties going up (0.5 -> 1, 1.5 -> 2)."""
    return np.floor(np.asarray(a, dtype=np.float64) + 0.5)


class Raster:
    """An immutable 8-bit image: grayscale ``(H, W)`` or RGB ``(H, W, 3)``.

    The backing array is copied on construction and marked read-only, so a
    Raster can be shared freely (between threads, across tool results)
    without defensive copies.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.dtype != np.uint8:
            raise ValueError(f"Raster requires uint8 data, got {arr.dtype}")
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] == 3:
            pass
        else:
            raise ValueError(f"Raster requires (H, W) or (H, W, 3) data, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Raster dimensions must be >= 1, got shape {arr.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):  # pragma: no cover - guard rail
        raise AttributeError("Raster is immutable")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def tobytes(self) -> bytes:
        """Row-major pixel bytes (interleaved RGB for 3-channel rasters)."""
        return self.data.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):  # content hash; rasters are immutable
        return hash((self.data.shape, self.data.tobytes()))

    def __repr__(self) -> str:
        kind = "gray" if self.channels == 1 else "rgb"
        return f"Raster({self.width}x{self.height} {kind})"


def _pil_to_raster(img: Image.Image) -> Raster:
    """Normalize a decoded Pillow image to 8-bit gray or RGB."""
    mode = img.mode
    if mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
        # 16-bit grayscale: keep the high byte.
        arr = np.asarray(img)
        arr = (arr.astype(np.uint32) >> 8).astype(np.uint8)
        return Raster(arr)
    if mode == "L":
        return Raster(np.asarray(img, dtype=np.uint8))
    if mode == "LA":
        return Raster(np.asarray(img.convert("L"), dtype=np.uint8))
    if mode == "RGB":
        return Raster(np.asarray(img, dtype=np.uint8))
    if mode in ("RGBA", "P", "1"):
        target = "RGB" if mode in ("RGBA", "P") else "L"
        return Raster(np.asarray(img.convert(target), dtype=np.uint8))
    raise DecodeError(f"unsupported pixel mode {mode!r}")


def load_image(path: str | Path) -> Raster:
    """Decode a PNG or binary PPM/PGM file into a Raster.

    Raises IoError if the file cannot be read, DecodeError if it is not a
    supported, well-formed image.
    """
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        with Image.open(io.BytesIO(payload)) as img:
            fmt = img.format
            if fmt not in _SUPPORTED_FORMATS:
                raise DecodeError(f"unsupported image format {fmt!r} in {path}")
            img.load()
            return _pil_to_raster(img)
    except DecodeError:
        raise
    except (UnidentifiedImageError, SyntaxError, ValueError, OSError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def encode_png_bytes(img: Raster) -> bytes:
    """Encode a Raster as PNG and return the bytes."""
    mode = "L" if img.channels == 1 else "RGB"
    out = io.BytesIO()
    Image.fromarray(np.asarray(img.data), mode=mode).save(out, format="PNG")
    return out.getvalue()


def encode_png(img: Raster, path: str | Path) -> None:
    """Write a Raster to ``path`` as PNG. Raises IoError on filesystem failure."""
    payload = encode_png_bytes(img)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def resize_bilinear(img: Raster, width: int, height: int) -> Raster:
    """Resample to ``width x height`` with half-pixel-center bilinear filtering.

    Source coordinates are clamped to the image, which replicates edge pixels
    when upsampling past the border. Output rounds half up per channel.
    """
    if width < 1 or height < 1:
        raise InvalidArgument(f"target dimensions must be >= 1, got {width}x{height}")
    src = img.data if img.channels == 3 else img.data[:, :, None]
    src = src.astype(np.float64)
    src_h, src_w = src.shape[:2]

    def axis_coords(dst_n: int, src_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        scale = src_n / dst_n
        pos = (np.arange(dst_n, dtype=np.float64) + 0.5) * scale - 0.5
        pos = np.clip(pos, 0.0, src_n - 1.0)
        lo = np.floor(pos).astype(np.intp)
        frac = pos - lo
        hi = np.minimum(lo + 1, src_n - 1)
        return lo, hi, frac

    x0, x1, fx = axis_coords(width, src_w)
    y0, y1, fy = axis_coords(height, src_h)
    fx = fx[None, :, None]
    fy = fy[:, None, None]

    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    out = round_half_up(out).astype(np.uint8)
    return Raster(out if img.channels == 3 else out[:, :, 0])


def to_grayscale(img: Raster) -> Raster:
    """BT.601 luma conversion; grayscale input is returned unchanged."""
    if img.channels == 1:
        return img
    rgb = img.data.astype(np.float64)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return Raster(round_half_up(luma).astype(np.uint8))


def quantize_minmax(field: np.ndarray) -> Raster:
    """Map a 2-D float field onto [0, 255] by min-max scaling.

    A constant field maps to all zeros (not a division-by-zero artifact).
    Raises NonFiniteError if the field contains NaN or infinity.
    """
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("field contains non-finite values")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return Raster(np.zeros(arr.shape, dtype=np.uint8))
    scaled = 255.0 * (arr - lo) / (hi - lo)
    return Raster(round_half_up(scaled).astype(np.uint8))
