"""The six visual tools exposed to the model, plus their dispatch layer.

Every tool maps a Raster to a Raster of the *same* dimensions, so tool
results can be re-attached to the conversation without the model having to
reason about size changes. RGB inputs are converted to luma first (except
ZoomIn, which crops in color). Operator conventions:

* ``ZoomInTool``    — normalized bbox crop, bilinearly resized back.
* ``LBPTool``       — 8-neighbor radius-1 local binary pattern. Bit order is
  clockwise from the top-left neighbor, most-significant bit first, with
  ``neighbor >= center`` setting the bit; border pixels (incomplete
  neighborhoods) are 0.
* ``FFTTool``       — log-magnitude spectrum ``ln(1 + |F|)`` of the
  zero-padded (next power of two) 2-D DFT, center-shifted, min-max
  quantized, resized back to the input dims.
* ``WaveletTransformTool`` — single-level Haar decomposition with averaging
  filters ``(a+b)/2``/``(a-b)/2``, bands min-max quantized independently and
  composed ``[[LL, LH], [HL, HH]]`` (LH = horizontal/x detail). Odd inputs
  are edge-padded to even before the transform and resized back after.
* ``EdgeDetectionTool`` — absolute response of the 4-neighbor Laplacian
  ``[[0,1,0],[1,-4,1],[0,1,0]]`` with edge-replicated borders, quantized.
* ``HOGTool``       — histogram-of-oriented-gradients star-glyph rendering
  (8 px cells, 9 unsigned bins of 20 deg with linear interpolation, 2x2
  blocks, L2-Hys). The rendering draws, per cell, one stroke per bin
  perpendicular to the bin's gradient orientation, intensity proportional
  to the unnormalized bin weight.

The FFT is an in-house iterative radix-2 transform (power-of-two sizes
only); no external FFT library is involved, so the Parseval / inverse /
brute-force DFT checks in the test suite exercise this code, not a vendor's.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import ImageTooSmall, InvalidArgument
from .imaging import Raster, quantize_minmax, resize_bilinear, round_half_up, to_grayscale


class ToolId(Enum):
    """The six tools, with their wire names (JSON ``name`` field) as values."""

    ZOOM_IN = "ZoomInTool"
    LBP = "LBPTool"
    FFT = "FFTTool"
    WAVELET = "WaveletTransformTool"
    EDGE = "EdgeDetectionTool"
    HOG = "HOGTool"


TOOL_ORDER: tuple[ToolId, ...] = tuple(ToolId)
TOOLS_BY_NAME: dict[str, ToolId] = {t.value: t for t in ToolId}

#: Tools whose rendered output is fed to a spoof-trace expert (all but ZoomIn).
ANALYSIS_TOOLS: tuple[ToolId, ...] = tuple(t for t in ToolId if t is not ToolId.ZOOM_IN)

#: Minimum normalized bbox side: 8 px at the working resolution of 224.
MIN_BBOX_EXTENT = 8.0 / 224.0


@dataclass(frozen=True)
class BBox:
    """Normalized region of interest; (x0, y0) top-left, (x1, y1) bottom-right."""

    x0: float
    y0: float
    x1: float
    y1: float

    def validate(self) -> "BBox":
        """Clamp coordinates into [0, 1] and enforce the minimum extent.

        Returns the clamped box. Raises InvalidArgument for non-finite
        coordinates, inverted boxes, or boxes thinner than MIN_BBOX_EXTENT
        on either side after clamping.
        """
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(np.isfinite(c) for c in coords):
            raise InvalidArgument(f"bbox has non-finite coordinates: {coords}")
        x0, y0, x1, y1 = (min(max(float(c), 0.0), 1.0) for c in coords)
        if x1 - x0 < MIN_BBOX_EXTENT or y1 - y0 < MIN_BBOX_EXTENT:
            raise InvalidArgument(
                f"bbox extent below minimum {MIN_BBOX_EXTENT:.6f}: "
                f"({x0:.4f},{y0:.4f})-({x1:.4f},{y1:.4f})"
            )
        return BBox(x0, y0, x1, y1)


def zoom_in(img: Raster, bbox: BBox) -> Raster:
    """Crop the bbox (pixel rect ``[floor(x0*W), ceil(x1*W))`` etc.) and
    resize the crop back to the input dimensions."""
    box = bbox.validate()
    w, h = img.width, img.height
    px0 = int(np.floor(box.x0 * w))
    px1 = int(np.ceil(box.x1 * w))
    py0 = int(np.floor(box.y0 * h))
    py1 = int(np.ceil(box.y1 * h))
    crop = img.data[py0:py1, px0:px1]
    return resize_bilinear(Raster(np.ascontiguousarray(crop)), w, h)


# --------------------------------------------------------------------------
# Local binary patterns


_LBP_OFFSETS = (  # clockwise from top-left; first entry -> bit 7
    (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1),
)


def lbp_map(img: Raster) -> Raster:
    """8-neighbor radius-1 LBP codes; border ring is 0."""
    gray = to_grayscale(img).data
    h, w = gray.shape
    if h < 3 or w < 3:
        raise ImageTooSmall(f"LBP needs at least 3x3, got {w}x{h}")
    g = gray.astype(np.int16)
    center = g[1:-1, 1:-1]
    acc = np.zeros(center.shape, dtype=np.uint8)
    for bit, (dy, dx) in enumerate(_LBP_OFFSETS):
        neighbor = g[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        acc |= ((neighbor >= center).astype(np.uint8)) << (7 - bit)
    out = np.zeros((h, w), dtype=np.uint8)
    out[1:-1, 1:-1] = acc
    return Raster(out)


# --------------------------------------------------------------------------
# Radix-2 FFT


@lru_cache(maxsize=32)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_pow2(a: np.ndarray, inverse: bool) -> np.ndarray:
    """Iterative Cooley-Tukey DFT along the last axis (length = power of two).

    Unnormalized in both directions; callers divide by n for the inverse.
    """
    n = a.shape[-1]
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"FFT length must be a power of two, got {n}")
    out = np.asarray(a, dtype=np.complex128)[..., _bit_reverse(n)].copy()
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 1j * np.pi * np.arange(half) / half)
        v = out.reshape(out.shape[:-1] + (n // size, size))
        even = v[..., :half]
        odd = v[..., half:] * twiddle
        summed = even + odd
        diffed = even - odd
        v[..., :half] = summed
        v[..., half:] = diffed
        size *= 2
    return out


def fft2(field: np.ndarray) -> np.ndarray:
    """2-D DFT of a power-of-two-sized field (rows then columns)."""
    a = np.asarray(field, dtype=np.complex128)
    if a.ndim != 2:
        raise ValueError(f"expected 2-D field, got shape {a.shape}")
    a = _fft_pow2(a, inverse=False)
    a = _fft_pow2(a.T, inverse=False).T
    return a


def ifft2(field: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2` (normalized by 1/(rows*cols))."""
    a = np.asarray(field, dtype=np.complex128)
    if a.ndim != 2:
        raise ValueError(f"expected 2-D field, got shape {a.shape}")
    a = _fft_pow2(a, inverse=True) / a.shape[-1]
    a = (_fft_pow2(a.T, inverse=True) / a.shape[0]).T
    return a


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length() if n > 1 else 1


def fft_spectrum(img: Raster) -> Raster:
    """Center-shifted log-magnitude spectrum, quantized and resized back."""
    gray = to_grayscale(img).data.astype(np.float64)
    h, w = gray.shape
    ph, pw = _next_pow2(h), _next_pow2(w)
    field = np.zeros((ph, pw), dtype=np.float64)
    field[:h, :w] = gray
    mag = np.abs(fft2(field))
    logmag = np.log1p(mag)
    shifted = np.roll(logmag, (ph // 2, pw // 2), axis=(0, 1))
    out = quantize_minmax(shifted)
    if (pw, ph) != (w, h):
        out = resize_bilinear(out, w, h)
    return out


# --------------------------------------------------------------------------
# Haar wavelet


def haar_bands(field: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Single-level Haar split of an even-dimensioned float field.

    Returns (LL, LH, HL, HH) where LH carries horizontal (x) detail and HL
    vertical (y) detail, each of half the input size.
    """
    a = np.asarray(field, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] % 2 or a.shape[1] % 2:
        raise ValueError(f"haar_bands needs even 2-D dims, got {a.shape}")
    lo_x = (a[:, 0::2] + a[:, 1::2]) / 2.0
    hi_x = (a[:, 0::2] - a[:, 1::2]) / 2.0
    ll = (lo_x[0::2, :] + lo_x[1::2, :]) / 2.0
    hl = (lo_x[0::2, :] - lo_x[1::2, :]) / 2.0
    lh = (hi_x[0::2, :] + hi_x[1::2, :]) / 2.0
    hh = (hi_x[0::2, :] - hi_x[1::2, :]) / 2.0
    return ll, lh, hl, hh


def haar_inverse(ll: np.ndarray, lh: np.ndarray, hl: np.ndarray, hh: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`haar_bands` (used for reconstruction checks)."""
    lo_x = np.empty((ll.shape[0] * 2, ll.shape[1]))
    lo_x[0::2, :] = ll + hl
    lo_x[1::2, :] = ll - hl
    hi_x = np.empty_like(lo_x)
    hi_x[0::2, :] = lh + hh
    hi_x[1::2, :] = lh - hh
    out = np.empty((lo_x.shape[0], lo_x.shape[1] * 2))
    out[:, 0::2] = lo_x + hi_x
    out[:, 1::2] = lo_x - hi_x
    return out


def haar_wavelet(img: Raster) -> Raster:
    """Quantized band mosaic [[LL, LH], [HL, HH]] at the input dimensions."""
    gray = to_grayscale(img).data.astype(np.float64)
    h, w = gray.shape
    padded = np.pad(gray, ((0, h % 2), (0, w % 2)), mode="edge")
    ll, lh, hl, hh = haar_bands(padded)
    top = np.hstack([quantize_minmax(ll).data, quantize_minmax(lh).data])
    bottom = np.hstack([quantize_minmax(hl).data, quantize_minmax(hh).data])
    mosaic = Raster(np.vstack([top, bottom]))
    if mosaic.width != w or mosaic.height != h:
        mosaic = resize_bilinear(mosaic, w, h)
    return mosaic


# --------------------------------------------------------------------------
# Laplacian edges


def laplacian_edge(img: Raster) -> Raster:
    """|Laplacian| response with edge-replicated borders, min-max quantized."""
    gray = to_grayscale(img).data.astype(np.float64)
    padded = np.pad(gray, 1, mode="edge")
    lap = (
        padded[:-2, 1:-1]
        + padded[2:, 1:-1]
        + padded[1:-1, :-2]
        + padded[1:-1, 2:]
        - 4.0 * gray
    )
    return quantize_minmax(np.abs(lap))


# --------------------------------------------------------------------------
# HOG


HOG_CELL = 8
HOG_BINS = 9
HOG_BIN_WIDTH = 180.0 / HOG_BINS
HOG_CLIP = 0.2
_HOG_EPS = 1e-12


def central_gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with edge replication (one-sided at borders)."""
    g = np.asarray(gray, dtype=np.float64)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    if g.shape[1] > 1:
        gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
        gx[:, 0] = g[:, 1] - g[:, 0]
        gx[:, -1] = g[:, -1] - g[:, -2]
    if g.shape[0] > 1:
        gy[1:-1, :] = g[2:, :] - g[:-2, :]
        gy[0, :] = g[1, :] - g[0, :]
        gy[-1, :] = g[-1, :] - g[-2, :]
    return gx, gy


def hog_cell_histograms(img: Raster) -> np.ndarray:
    """Unnormalized per-cell orientation histograms, shape (cells_y, cells_x, 9).

    Unsigned orientation in [0, 180) with bin centers at k*20 deg; each
    pixel's magnitude is split linearly between the two nearest bin centers
    (wrapping 180 -> 0). Pixels outside the covered cell grid are ignored.
    """
    gray = to_grayscale(img).data.astype(np.float64)
    h, w = gray.shape
    cells_y, cells_x = h // HOG_CELL, w // HOG_CELL
    if cells_y < 2 or cells_x < 2:
        raise ImageTooSmall(f"HOG needs at least 16x16, got {w}x{h}")
    gx, gy = central_gradients(gray)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    hc, wc = cells_y * HOG_CELL, cells_x * HOG_CELL
    mag = mag[:hc, :wc]
    ang = ang[:hc, :wc]

    t = ang / HOG_BIN_WIDTH
    k0 = np.minimum(np.floor(t).astype(np.intp), HOG_BINS - 1)
    frac = t - k0
    k1 = (k0 + 1) % HOG_BINS

    cell_of_row = np.arange(hc) // HOG_CELL
    cell_of_col = np.arange(wc) // HOG_CELL
    cell_idx = (cell_of_row[:, None] * cells_x + cell_of_col[None, :]).ravel()
    hist = np.zeros((cells_y * cells_x, HOG_BINS), dtype=np.float64)
    np.add.at(hist, (cell_idx, k0.ravel()), (mag * (1.0 - frac)).ravel())
    np.add.at(hist, (cell_idx, k1.ravel()), (mag * frac).ravel())
    return hist.reshape(cells_y, cells_x, HOG_BINS)


def hog_features(img: Raster) -> np.ndarray:
    """L2-Hys block-normalized HOG descriptor.

    2x2-cell blocks at stride 1; each block vector is L2-normalized, clipped
    at 0.2, and L2-normalized again. Length is
    ``(cells_x - 1) * (cells_y - 1) * 36`` (26244 for 224x224).
    """
    hist = hog_cell_histograms(img)
    cells_y, cells_x = hist.shape[:2]
    feats = np.empty(((cells_y - 1) * (cells_x - 1), 4 * HOG_BINS), dtype=np.float64)
    i = 0
    for by in range(cells_y - 1):
        for bx in range(cells_x - 1):
            v = hist[by : by + 2, bx : bx + 2, :].ravel()
            v = v / np.sqrt(np.sum(v * v) + _HOG_EPS)
            v = np.minimum(v, HOG_CLIP)
            v = v / np.sqrt(np.sum(v * v) + _HOG_EPS)
            feats[i] = v
            i += 1
    return feats.ravel()


_HOG_STROKE_OFFSETS = (np.arange(16, dtype=np.float64) - 7.5) * 0.5  # spans the 8px cell


def hog_render(img: Raster) -> Raster:
    """Star-glyph visualization of the cell histograms.

    Each cell draws one 8 px stroke per orientation bin through the cell
    center, *perpendicular* to the bin's gradient orientation (so the stroke
    follows the edge the gradient implies); stroke intensity adds the
    unnormalized bin weight once per covered pixel. The accumulated canvas
    is min-max quantized.
    """
    hist = hog_cell_histograms(img)
    cells_y, cells_x = hist.shape[:2]
    canvas = np.zeros((img.height, img.width), dtype=np.float64)
    half = (HOG_CELL - 1) / 2.0
    angles = np.radians(np.arange(HOG_BINS) * HOG_BIN_WIDTH + 90.0)
    dir_x = np.cos(angles)
    dir_y = np.sin(angles)
    # snap the ~1e-16 residue of cos/sin at right angles so axis-aligned
    # strokes land on a single pixel column/row
    dir_x[np.abs(dir_x) < 1e-9] = 0.0
    dir_y[np.abs(dir_y) < 1e-9] = 0.0
    for by in range(cells_y):
        cy = by * HOG_CELL + half
        y_lo, y_hi = by * HOG_CELL, by * HOG_CELL + HOG_CELL - 1
        for bx in range(cells_x):
            cx = bx * HOG_CELL + half
            x_lo, x_hi = bx * HOG_CELL, bx * HOG_CELL + HOG_CELL - 1
            for k in range(HOG_BINS):
                weight = hist[by, bx, k]
                if weight <= 0.0:
                    continue
                px = round_half_up(cx + _HOG_STROKE_OFFSETS * dir_x[k]).astype(np.intp)
                py = round_half_up(cy + _HOG_STROKE_OFFSETS * dir_y[k]).astype(np.intp)
                px = np.clip(px, x_lo, x_hi)
                py = np.clip(py, y_lo, y_hi)
                flat = np.unique(py * img.width + px)
                canvas.ravel()[flat] += weight
    return quantize_minmax(canvas)


# --------------------------------------------------------------------------
# Dispatch


def validate_tool_args(tool: ToolId, args: Mapping) -> dict:
    """Schema-validate tool-call arguments without touching pixels.

    ZoomInTool takes exactly ``{"bbox": [x0, y0, x1, y1]}``; every other
    tool takes exactly ``{}``. Returns the normalized argument dict (bbox
    clamped). Raises InvalidArgument on any deviation.
    """
    if not isinstance(args, Mapping):
        raise InvalidArgument(f"arguments must be an object, got {type(args).__name__}")
    if tool is ToolId.ZOOM_IN:
        if set(args.keys()) != {"bbox"}:
            raise InvalidArgument(
                f"{tool.value} takes exactly one argument 'bbox', got {sorted(map(str, args))}"
            )
        raw = args["bbox"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 4:
            raise InvalidArgument(f"bbox must be a list of 4 numbers, got {raw!r}")
        if not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in raw):
            raise InvalidArgument(f"bbox must be a list of 4 numbers, got {raw!r}")
        box = BBox(*(float(c) for c in raw)).validate()
        return {"bbox": [box.x0, box.y0, box.x1, box.y1]}
    if len(args) != 0:
        raise InvalidArgument(f"{tool.value} takes no arguments, got {sorted(map(str, args))}")
    return {}


def dispatch(tool: ToolId, args: Mapping, img: Raster) -> Raster:
    """Validate ``args`` and run ``tool`` on ``img``."""
    normalized = validate_tool_args(tool, args)
    if tool is ToolId.ZOOM_IN:
        return zoom_in(img, BBox(*normalized["bbox"]))
    if tool is ToolId.LBP:
        return lbp_map(img)
    if tool is ToolId.FFT:
        return fft_spectrum(img)
    if tool is ToolId.WAVELET:
        return haar_wavelet(img)
    if tool is ToolId.EDGE:
        return laplacian_edge(img)
    if tool is ToolId.HOG:
        return hog_render(img)
    raise InvalidArgument(f"unknown tool {tool!r}")  # pragma: no cover
