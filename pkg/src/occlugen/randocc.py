"""Procedural random-shape occluders.

Instead of real cutouts, this pipeline draws smoothed random polygons,
fills them with a crop of a texture photograph and composites them over
the face, optionally semi-transparent. Cheap to produce in bulk and free
of any annotation cost, at the price of looking synthetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from . import imgcore
from .errors import GenerationError, InputError
from .manifest import ManifestRecord
from .natocc import (
    CompositeSample,
    FaceSample,
    Occluder,
    OcclusionAugmentConfig,
    augment_occluder,
    compose,
    place_occluder,
)

__all__ = [
    "RandOccConfig",
    "random_shape",
    "texture_fill",
    "assign_transparency",
    "generate_randocc_sample",
]

_SHAPE_ATTEMPTS = 10
_AREA_BOUNDS = (0.10, 0.90)


@dataclass(frozen=True)
class RandOccConfig(OcclusionAugmentConfig):
    """Random-shape pipeline settings on top of the shared knobs."""

    transparency_prob: float = 0.30
    alpha_range: tuple[float, float] = (0.5, 0.8)
    shape_vertex_count_range: tuple[int, int] = (6, 14)
    shape_irregularity: float = 0.4
    smoothing_iterations: int = 3

    def validate(self) -> list[str]:
        bad = super().validate()
        if not 0.0 <= self.transparency_prob <= 1.0:
            bad.append(f"transparency_prob must be in [0, 1], got {self.transparency_prob}")
        a, b = self.alpha_range
        # 1.0 is reserved for the opaque branch of the transparency draw
        if not (0.0 < a <= b < 1.0):
            bad.append(f"alpha_range must satisfy 0 < low <= high < 1, got {self.alpha_range}")
        lo, hi = self.shape_vertex_count_range
        if lo < 3 or hi < lo:
            bad.append(
                "shape_vertex_count_range must be an ordered pair with at least 3 vertices, "
                f"got {self.shape_vertex_count_range}"
            )
        if not 0.0 <= self.shape_irregularity <= 1.0:
            bad.append(f"shape_irregularity must be in [0, 1], got {self.shape_irregularity}")
        if self.smoothing_iterations < 0:
            bad.append(
                f"smoothing_iterations must be non-negative, got {self.smoothing_iterations}"
            )
        return bad


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _chaikin(verts: np.ndarray, iterations: int) -> np.ndarray:
    # classic corner cutting: each edge contributes its 1/4 and 3/4 points
    for _ in range(iterations):
        nxt = np.roll(verts, -1, axis=0)
        quarter = 0.75 * verts + 0.25 * nxt
        three_quarter = 0.25 * verts + 0.75 * nxt
        verts = np.empty((2 * len(verts), 2), dtype=np.float64)
        verts[0::2] = quarter
        verts[1::2] = three_quarter
    return verts


def _rasterize(verts: np.ndarray, w: int, h: int) -> np.ndarray:
    """Even-odd scanline fill of a closed polygon at pixel centers."""
    mask = np.zeros((h, w), dtype=np.uint8)
    ys = np.arange(h, dtype=np.float64) + 0.5
    px, py = verts[:, 0], verts[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    crossings: list[list[float]] = [[] for _ in range(h)]
    for x1, y1, x2, y2 in zip(px, py, qx, qy):
        if y1 == y2:
            continue
        ylo, yhi = (y1, y2) if y1 < y2 else (y2, y1)
        # half-open span so a vertex row is counted by exactly one edge
        rows = np.nonzero((ys >= ylo) & (ys < yhi))[0]
        if rows.size == 0:
            continue
        xc = x1 + (ys[rows] - y1) * (x2 - x1) / (y2 - y1)
        for row, x in zip(rows, xc):
            crossings[row].append(float(x))
    for row, xs in enumerate(crossings):
        if not xs:
            continue
        xs.sort()
        for i in range(0, len(xs) - 1, 2):
            lo = max(int(np.ceil(xs[i] - 0.5)), 0)
            hi = min(int(np.ceil(xs[i + 1] - 0.5)), w)
            if hi > lo:
                mask[row, lo:hi] = 1
    return mask


def random_shape(canvas: tuple[int, int], cfg: RandOccConfig, seed) -> np.ndarray:
    """Draw one smoothed random polygon mask on a (w, h) canvas.

    Vertices sit at evenly spaced angles around the canvas center, each
    angle and radius perturbed in proportion to ``shape_irregularity``
    (zero gives a regular polygon at a fixed radius, up to the random
    global orientation). Chaikin corner cutting rounds the outline, then
    an even-odd scanline pass fills it. Shapes covering less than 10% or
    more than 90% of the canvas, or splitting into several components,
    are redrawn; 10 failures raise.
    """
    w, h = canvas
    if w < 16 or h < 16:
        raise InputError(f"canvas must be at least 16x16, got {w}x{h}")
    rng = _as_rng(seed)
    lo_k, hi_k = cfg.shape_vertex_count_range
    area_lo = _AREA_BOUNDS[0] * w * h
    area_hi = _AREA_BOUNDS[1] * w * h
    for _ in range(_SHAPE_ATTEMPTS):
        k = int(rng.integers(lo_k, hi_k + 1))
        spacing = 2.0 * np.pi / k
        phase = rng.uniform(0.0, 1.0)
        jitter = cfg.shape_irregularity * rng.uniform(-0.5, 0.5, size=k) * spacing
        angles = np.sort((np.arange(k) + phase) * spacing + jitter)
        base_radius = rng.uniform(0.25, 0.42) * min(w, h)
        radii = base_radius * (1.0 + cfg.shape_irregularity * rng.uniform(-1.0, 1.0, size=k))
        radii = np.maximum(radii, 2.0)
        verts = np.stack(
            [w / 2.0 + radii * np.cos(angles), h / 2.0 + radii * np.sin(angles)], axis=1
        )
        verts = _chaikin(verts, cfg.smoothing_iterations)
        mask = _rasterize(verts, w, h)
        area = int(mask.sum())
        if not area_lo <= area <= area_hi:
            continue
        _, n_components = scipy.ndimage.label(mask)
        if n_components != 1:
            continue
        return mask
    raise GenerationError(
        f"no acceptable shape after {_SHAPE_ATTEMPTS} attempts on a {w}x{h} canvas"
    )


def texture_fill(shape: np.ndarray, texture: np.ndarray, seed) -> Occluder:
    """Fill a shape mask with a random window of a texture image.

    The window side lengths are drawn between 50% and 100% of the shape's
    bounding box (the texture is tiled when too small), then the window is
    resized to the bounding box and masked by the shape. The occluder id
    encodes the crop so the draw is auditable.
    """
    shape = np.asarray(shape)
    if shape.ndim != 2 or shape.dtype != np.uint8:
        raise InputError("shape must be a binary (H, W) uint8 mask")
    texture = np.asarray(texture, dtype=np.float64)
    if texture.ndim != 3 or texture.shape[2] != 3:
        raise InputError(f"texture must be (H, W, 3), got {texture.shape}")
    if texture.shape[0] < 32 or texture.shape[1] < 32:
        raise InputError(
            f"texture must be at least 32x32, got {texture.shape[1]}x{texture.shape[0]}"
        )
    ys, xs = np.nonzero(shape)
    if ys.size == 0:
        raise InputError("shape mask is empty")
    rng = _as_rng(seed)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    bw, bh = x1 - x0, y1 - y0
    win_w = max(1, int(round(rng.uniform(0.5, 1.0) * bw)))
    win_h = max(1, int(round(rng.uniform(0.5, 1.0) * bh)))
    th, tw = texture.shape[:2]
    reps_y = -(-win_h // th)
    reps_x = -(-win_w // tw)
    tiled = np.tile(texture, (max(reps_y, 1), max(reps_x, 1), 1))
    ox = int(rng.integers(tiled.shape[1] - win_w + 1))
    oy = int(rng.integers(tiled.shape[0] - win_h + 1))
    window = tiled[oy : oy + win_h, ox : ox + win_w]
    patch = imgcore.resize(window, bw, bh, "bilinear")
    canvas = np.zeros(shape.shape + (3,), dtype=np.float64)
    canvas[y0:y1, x0:x1] = patch * shape[y0:y1, x0:x1, None]
    return Occluder(
        id=f"crop{ox}+{oy}+{win_w}x{win_h}",
        image=canvas,
        mask=shape.astype(np.float64),
        category="synthetic",
    )


def assign_transparency(cfg: RandOccConfig, seed) -> float:
    """Blend strength for one occluder: 1.0, or a draw from ``alpha_range``
    with probability ``transparency_prob``."""
    rng = _as_rng(seed)
    if rng.random() < cfg.transparency_prob:
        return float(rng.uniform(cfg.alpha_range[0], cfg.alpha_range[1]))
    return 1.0


def generate_randocc_sample(
    face: FaceSample,
    texture_pool,
    cfg: RandOccConfig,
    seed,
) -> CompositeSample:
    """Generate one random-shape occluded sample.

    Flow: draw a shape on a face-sized canvas, fill it with a texture
    window, draw the transparency, augment, place, composite with the
    global alpha folded into the feathered blend map. The ground truth
    stays alpha-invariant: shape pixels are non-face even when the shape
    is see-through.
    """
    if len(texture_pool) == 0:
        raise InputError("texture pool is empty")
    rng = _as_rng(seed)
    fh, fw = face.face_mask.shape
    shape = random_shape((fw, fh), cfg, rng)
    tex_id, texture = texture_pool[int(rng.integers(len(texture_pool)))]
    occ = texture_fill(shape, texture, rng)
    occ = Occluder(
        id=f"{tex_id}:{occ.id}",
        image=occ.image,
        mask=occ.mask,
        category="synthetic",
    )
    alpha = assign_transparency(cfg, rng)
    occ = augment_occluder(occ, (fw, fh), cfg, rng)
    offset = place_occluder(face, occ, cfg, rng)
    sample = compose(face, occ, offset, cfg, global_alpha=alpha)
    record = ManifestRecord(
        pipeline="randocc",
        face_id=face.id,
        occluder_ids=[occ.id],
        alpha=float(alpha),
        scale=occ.applied_scale,
        placement=sample.record.placement,
        status="ok",
    )
    return CompositeSample(image=sample.image, gt_mask=sample.gt_mask, record=record)
