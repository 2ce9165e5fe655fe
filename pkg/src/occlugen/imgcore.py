"""Pure imaging primitives shared by every generation pipeline.

Conventions used throughout the package:

* images are ``(H, W, 3)`` float64 arrays with intensities in ``[0, 1]``
* soft masks are ``(H, W)`` float64 arrays in ``[0, 1]``
* binary masks are ``(H, W)`` uint8 arrays holding only 0 or 1
* pixel ``(x, y)`` refers to column x, row y; y grows downward

Every function here is pure: inputs are never mutated and identical inputs
produce bit-identical outputs on every call.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.ndimage
from PIL import Image

from .errors import InputError

__all__ = [
    "AffineParams",
    "alpha_blend",
    "gaussian_blur",
    "affine_transform",
    "photometric_adjust",
    "lossy_recompress",
    "morphology",
    "resize",
    "to_uint8",
    "from_uint8",
    "encode_image_png",
    "encode_mask_png",
    "write_image_png",
    "write_mask_png",
    "read_image_png",
    "read_binary_mask_png",
    "read_soft_mask_png",
]


def _check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise InputError(f"{name} must be a float array, got dtype {img.dtype}")
    return img.astype(np.float64, copy=False)


def _check_plane(arr: np.ndarray, name: str = "mask") -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise InputError(f"{name} must have shape (H, W), got {arr.shape}")
    return arr


def _check_binary(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    mask = _check_plane(mask, name)
    if mask.dtype != np.uint8:
        raise InputError(f"{name} must be uint8, got dtype {mask.dtype}")
    return mask


# ---------------------------------------------------------------------------
# blending and photometry
# ---------------------------------------------------------------------------


def alpha_blend(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Blend ``fg`` over ``bg`` with a per-pixel soft alpha map.

    ``out = alpha * fg + (1 - alpha) * bg`` clamped to [0, 1]. An alpha of
    exactly 1 reproduces the foreground bit for bit, 0 the background.
    """
    fg = _check_image(fg, "fg")
    bg = _check_image(bg, "bg")
    alpha = _check_plane(np.asarray(alpha, dtype=np.float64), "alpha")
    if fg.shape != bg.shape:
        raise InputError(f"fg/bg shapes differ: {fg.shape} vs {bg.shape}")
    if alpha.shape != fg.shape[:2]:
        raise InputError(
            f"alpha shape {alpha.shape} does not match image shape {fg.shape[:2]}"
        )
    a = alpha[:, :, None]
    return np.clip(a * fg + (1.0 - a) * bg, 0.0, 1.0)


def photometric_adjust(img: np.ndarray, contrast: float, brightness: float) -> np.ndarray:
    """Contrast scaling about mid-gray followed by a brightness shift.

    ``out = clamp(contrast * (img - 0.5) + 0.5 + brightness)``.
    """
    img = _check_image(img)
    if contrast <= 0:
        raise InputError(f"contrast must be positive, got {contrast}")
    return np.clip(contrast * (img - 0.5) + 0.5 + brightness, 0.0, 1.0)


# ---------------------------------------------------------------------------
# gaussian blur
# ---------------------------------------------------------------------------


def gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicated edges.

    The 1D kernel spans ``ceil(3 * sigma)`` taps to each side and is
    normalized to sum exactly 1, so an impulse away from the border keeps its
    total mass. ``sigma`` below 0.1 returns the input unchanged. Works on
    single planes and on (H, W, 3) images, channels independently.
    """
    if sigma < 0:
        raise InputError(f"sigma must be non-negative, got {sigma}")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise InputError(f"expected a 2D or 3D array, got shape {arr.shape}")
    if sigma < 0.1:
        return arr
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = scipy.ndimage.correlate1d(arr, kernel, axis=0, mode="nearest")
    out = scipy.ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
    return out


# ---------------------------------------------------------------------------
# geometric transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineParams:
    """Geometric transform about the canvas center.

    The forward map applies scale, then horizontal shear, then rotation,
    then the pixel translation. Angles are degrees; a positive rotation
    turns content clockwise on screen (y grows downward), so rotating the
    unit vector (0, -1) by +90 degrees yields (1, 0).
    """

    rotation: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    shear: float = 0.0
    translate_x: float = 0.0
    translate_y: float = 0.0

    def matrix(self) -> np.ndarray:
        """2x2 linear part of the forward map."""
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise InputError(
                f"scale factors must be positive, got ({self.scale_x}, {self.scale_y})"
            )
        th = math.radians(self.rotation)
        c, s = math.cos(th), math.sin(th)
        rot = np.array([[c, -s], [s, c]])
        shear = np.array([[1.0, math.tan(math.radians(self.shear))], [0.0, 1.0]])
        scale = np.diag([float(self.scale_x), float(self.scale_y)])
        return rot @ shear @ scale


def rotate_vector(vec: tuple[float, float], degrees: float) -> tuple[float, float]:
    """Rotate a 2D direction by the same convention as :class:`AffineParams`."""
    th = math.radians(degrees)
    c, s = math.cos(th), math.sin(th)
    x, y = vec
    return (c * x - s * y, s * x + c * y)


def _sample_bilinear_zero(arr: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear gather at float coordinates.

    A sample whose coordinate leaves the canvas domain [0, w-1] x [0, h-1]
    reads zero outright (no partial blend against edge pixels); in-domain
    samples use the full four-tap blend.
    """
    coords = np.stack([gy.ravel(), gx.ravel()])
    gather = lambda plane: scipy.ndimage.map_coordinates(
        plane, coords, order=1, mode="constant", cval=0.0, prefilter=False
    )
    if arr.ndim == 2:
        return gather(np.ascontiguousarray(arr, dtype=np.float64)).reshape(gx.shape)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    out = np.stack([gather(arr[..., c]) for c in range(arr.shape[2])], axis=-1)
    return out.reshape(gx.shape + (arr.shape[2],))


def _sample_nearest_zero(arr: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Nearest-neighbor gather; coordinates outside the canvas read 0."""
    h, w = arr.shape[:2]
    # floor(g + 0.5) rather than np.round: ties must break toward +inf,
    # not to even, or the oracle mapping drifts by one pixel on exact halves.
    xi = np.floor(gx + 0.5).astype(np.int64)
    yi = np.floor(gy + 0.5).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    tap = arr[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    if arr.ndim == 3:
        valid = valid[..., None]
    return np.where(valid, tap, 0)


def affine_transform(
    img: np.ndarray,
    mask: np.ndarray,
    params: AffineParams,
    interp: str = "bilinear",
) -> tuple[np.ndarray, np.ndarray]:
    """Warp an image and its mask with one shared affine map.

    The output canvas keeps the input size; samples that fall outside the
    source read as zero. The image is always sampled bilinearly, ``interp``
    selects how the mask is sampled. Implemented by inverse-mapping output
    pixel centers through the affine matrix about the canvas center.
    """
    img = _check_image(img)
    mask = _check_plane(np.asarray(mask), "mask")
    if mask.shape != img.shape[:2]:
        raise InputError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if interp not in ("bilinear", "nearest"):
        raise InputError(f"unknown interpolation {interp!r}")
    h, w = img.shape[:2]
    inv = np.linalg.inv(params.matrix())
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ox, oy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dx = ox - cx - params.translate_x
    dy = oy - cy - params.translate_y
    gx = inv[0, 0] * dx + inv[0, 1] * dy + cx
    gy = inv[1, 0] * dx + inv[1, 1] * dy + cy
    out_img = _sample_bilinear_zero(img, gx, gy)
    if interp == "bilinear":
        out_mask = _sample_bilinear_zero(mask.astype(np.float64), gx, gy)
        if mask.dtype == np.uint8:
            out_mask = (out_mask >= 0.5).astype(np.uint8)
    else:
        out_mask = _sample_nearest_zero(mask, gx, gy)
    return out_img, out_mask


def resize(arr: np.ndarray, new_w: int, new_h: int, interp: str | None = None) -> np.ndarray:
    """Resize a plane or image to ``new_w`` x ``new_h``.

    Coordinates follow the half-pixel-center convention:
    ``src = (dst + 0.5) * old / new - 0.5`` with edge clamping. ``interp``
    defaults to bilinear for float arrays and nearest for uint8 masks;
    binary masks must use nearest so they stay binary.
    """
    arr = np.asarray(arr)
    if arr.ndim not in (2, 3):
        raise InputError(f"expected a 2D or 3D array, got shape {arr.shape}")
    if new_w < 1 or new_h < 1:
        raise InputError(f"target size must be at least 1x1, got {new_w}x{new_h}")
    if interp is None:
        interp = "nearest" if arr.dtype == np.uint8 else "bilinear"
    if interp not in ("bilinear", "nearest"):
        raise InputError(f"unknown interpolation {interp!r}")
    if arr.dtype == np.uint8 and interp == "bilinear":
        raise InputError("binary masks must be resized with nearest interpolation")
    h, w = arr.shape[:2]
    if (new_w, new_h) == (w, h):
        return arr.copy()
    if interp == "nearest":
        xi = np.minimum((np.floor((np.arange(new_w) + 0.5) * (w / new_w))).astype(np.int64), w - 1)
        yi = np.minimum((np.floor((np.arange(new_h) + 0.5) * (h / new_h))).astype(np.int64), h - 1)
        return arr[yi[:, None], xi[None, :]]
    gx = (np.arange(new_w, dtype=np.float64) + 0.5) * (w / new_w) - 0.5
    gy = (np.arange(new_h, dtype=np.float64) + 0.5) * (h / new_h) - 0.5
    x0f = np.floor(gx)
    y0f = np.floor(gy)
    wx = gx - x0f
    wy = gy - y0f
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    arr = arr.astype(np.float64, copy=False)
    if arr.ndim == 3:
        wx = wx[None, :, None]
        wy = wy[:, None, None]
    else:
        wx = wx[None, :]
        wy = wy[:, None]
    top = (1.0 - wx) * arr[y0[:, None], x0[None, :]] + wx * arr[y0[:, None], x1[None, :]]
    bot = (1.0 - wx) * arr[y1[:, None], x0[None, :]] + wx * arr[y1[:, None], x1[None, :]]
    return (1.0 - wy) * top + wy * bot


# ---------------------------------------------------------------------------
# morphology
# ---------------------------------------------------------------------------


def morphology(mask: np.ndarray, op: str, radius: int) -> np.ndarray:
    """Dilate or erode a binary mask with a square structuring element.

    The element is ``(2 * radius + 1)`` pixels on a side; pixels beyond the
    canvas count as background.
    """
    mask = _check_binary(mask)
    if not isinstance(radius, (int, np.integer)) or radius < 1:
        raise InputError(f"radius must be a positive integer, got {radius!r}")
    size = 2 * int(radius) + 1
    if op == "dilate":
        out = scipy.ndimage.maximum_filter(mask, size=size, mode="constant", cval=0)
    elif op == "erode":
        out = scipy.ndimage.minimum_filter(mask, size=size, mode="constant", cval=0)
    else:
        raise InputError(f"unknown morphology op {op!r}")
    return out.astype(np.uint8, copy=False)


# ---------------------------------------------------------------------------
# lossy recompression
# ---------------------------------------------------------------------------

# Standard luminance quantization steps, applied per channel.
_BASE_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def _quant_table(quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.clip(np.floor((_BASE_QTABLE * scale + 50.0) / 100.0), 1.0, 255.0)
    # DC stays unquantized so flat regions survive every quality setting.
    table[0, 0] = 1.0
    return table


def lossy_recompress(img: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip an image through a blockwise lossy transform codec.

    8x8 blocks are taken to the frequency domain (orthonormal DCT), the
    coefficients quantized with a quality-scaled step table, inverted, and
    the result stored at 8-bit precision. Lower quality discards more of
    the high-frequency content. Edges are padded by replication to a
    multiple of 8 and cropped back afterwards.
    """
    img = _check_image(img)
    if isinstance(quality, bool) or not isinstance(quality, (int, np.integer)):
        raise InputError(f"quality must be an integer, got {quality!r}")
    if not 1 <= quality <= 100:
        raise InputError(f"quality must be in [1, 100], got {quality}")
    table = _quant_table(int(quality))
    h, w = img.shape[:2]
    ph = (-h) % 8
    pw = (-w) % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hh, ww = padded.shape[:2]
    levels = padded * 255.0 - 128.0
    blocks = levels.reshape(hh // 8, 8, ww // 8, 8, 3).transpose(0, 2, 1, 3, 4)
    coef = scipy.fft.dctn(blocks, axes=(2, 3), norm="ortho")
    coef = np.round(coef / table[None, None, :, :, None]) * table[None, None, :, :, None]
    rec = scipy.fft.idctn(coef, axes=(2, 3), norm="ortho")
    rec = rec.transpose(0, 2, 1, 3, 4).reshape(hh, ww, 3)
    rec = np.clip((rec + 128.0) / 255.0, 0.0, 1.0)[:h, :w]
    # 8-bit storage round trip is part of the codec contract.
    return from_uint8(to_uint8(rec))


# ---------------------------------------------------------------------------
# PNG input and output
# ---------------------------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to uint8 with round-half-up."""
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(
        np.uint8
    )


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


def encode_image_png(img: np.ndarray) -> bytes:
    """Encode an image to PNG bytes. Same image, same bytes, every time.

    Compression level 1 trades file size for encode speed; bulk dataset
    writes are encoder-bound, and the byte stream stays deterministic.
    """
    img = _check_image(img)
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(
        buf, format="PNG", optimize=False, compress_level=1
    )
    return buf.getvalue()


def encode_mask_png(mask: np.ndarray) -> bytes:
    """Encode a binary mask to PNG bytes, foreground stored as 255."""
    mask = _check_binary(mask)
    buf = io.BytesIO()
    Image.fromarray(mask * np.uint8(255), mode="L").save(
        buf, format="PNG", optimize=False, compress_level=1
    )
    return buf.getvalue()


def write_image_png(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image_png(img))


def write_mask_png(path, mask: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_mask_png(mask))


def read_image_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return from_uint8(arr)


def read_binary_mask_png(path) -> np.ndarray:
    """Load a stored mask; gray values of 128 and above count as foreground."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return (arr >= 128).astype(np.uint8)


def read_soft_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return from_uint8(arr)
