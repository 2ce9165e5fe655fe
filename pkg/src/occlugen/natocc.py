"""Naturalistic occluder compositing.

A face image with a known skin mask is occluded by a segmented real-world
cutout: a hand, pointed at the face and recolored toward the face palette
with sliced optimal transport, or an arbitrary object. The composite gets
a pixel-exact two-class ground truth mask: visible face skin versus
everything else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import imgcore, sot
from .errors import GenerationError, InputError
from .imgcore import AffineParams
from .manifest import ManifestRecord

__all__ = [
    "Occluder",
    "FaceSample",
    "CompositeSample",
    "OcclusionAugmentConfig",
    "NatOccConfig",
    "draw_scale",
    "augment_occluder",
    "orient_hand",
    "place_occluder",
    "compose",
    "generate_natocc_sample",
]

CATEGORIES = ("hand", "object", "synthetic")


@dataclass
class Occluder:
    """A segmented occluder on its own canvas.

    ``mask`` is a soft support map the same size as ``image``; pixels at or
    above 0.5 are the occluder proper. Hands carry ``finger_direction``, a
    unit vector in image coordinates pointing from wrist to fingertips in
    the canonical pose (straight up is ``(0, -1)``). ``applied_scale``
    records the size draw once the occluder went through augmentation.
    """

    id: str
    image: np.ndarray
    mask: np.ndarray
    category: str
    finger_direction: tuple[float, float] | None = None
    applied_scale: float | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InputError(f"unknown occluder category {self.category!r}")
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise InputError(f"occluder image must be (H, W, 3), got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise InputError(
                f"occluder mask shape {self.mask.shape} does not match image "
                f"{self.image.shape[:2]}"
            )
        if not (np.asarray(self.mask) >= 0.5).any():
            raise InputError(f"occluder {self.id!r} has an empty mask")
        if self.category == "hand":
            if self.finger_direction is None:
                raise InputError(f"hand occluder {self.id!r} needs a finger_direction")
            norm = math.hypot(*self.finger_direction)
            if abs(norm - 1.0) > 1e-6:
                raise InputError(
                    f"finger_direction must be a unit vector, |v| = {norm:.8f}"
                )


@dataclass
class FaceSample:
    """A face image plus its binary skin mask."""

    id: str
    image: np.ndarray
    face_mask: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise InputError(f"face image must be (H, W, 3), got {self.image.shape}")
        if self.face_mask.shape != self.image.shape[:2]:
            raise InputError(
                f"face mask shape {self.face_mask.shape} does not match image "
                f"{self.image.shape[:2]}"
            )
        if not self.face_mask.any():
            raise InputError(f"face {self.id!r} has an empty skin mask")


@dataclass
class CompositeSample:
    """One finished occluded sample: composite, ground truth, provenance."""

    image: np.ndarray
    gt_mask: np.ndarray
    record: ManifestRecord
    sot_report: sot.PreprocessReport | None = None


def _check_range(name: str, rng_pair, lo=None, hi=None, ordered=True) -> list[str]:
    bad = []
    try:
        a, b = rng_pair
    except (TypeError, ValueError):
        return [f"{name} must be a (low, high) pair, got {rng_pair!r}"]
    if ordered and a > b:
        bad.append(f"{name} low must not exceed high, got {rng_pair}")
    if lo is not None and a < lo:
        bad.append(f"{name} must stay at or above {lo}, got {rng_pair}")
    if hi is not None and b > hi:
        bad.append(f"{name} must stay at or below {hi}, got {rng_pair}")
    return bad


@dataclass(frozen=True)
class OcclusionAugmentConfig:
    """Augmentation, placement and blending knobs shared by both pipelines.

    ``scale_range`` is the occluder size relative to the face: the resize
    makes the occluder's longer side equal ``r`` times the face's longer
    side. ``quality_range`` of None disables recompression entirely.
    """

    scale_range: tuple[float, float] = (0.5, 1.0)
    rotation_range: tuple[float, float] = (-25.0, 25.0)
    shear_range: tuple[float, float] = (-8.0, 8.0)
    contrast_range: tuple[float, float] = (0.8, 1.2)
    brightness_range: tuple[float, float] = (-0.2, 0.2)
    quality_range: tuple[int, int] | None = (50, 95)
    mask_feather_sigma: float = 2.0
    intersection_band_radius: int = 3
    intersection_blur_sigma: float = 1.5
    bbox_expand_fraction: float = 0.25
    min_overlap_fraction: float = 0.10
    max_placement_attempts: int = 20

    def validate(self) -> list[str]:
        bad = []
        bad += _check_range("scale_range", self.scale_range, lo=1e-6, hi=1.0)
        bad += _check_range("rotation_range", self.rotation_range)
        bad += _check_range("shear_range", self.shear_range, lo=-45.0, hi=45.0)
        bad += _check_range("contrast_range", self.contrast_range, lo=1e-6)
        bad += _check_range("brightness_range", self.brightness_range, lo=-1.0, hi=1.0)
        if self.quality_range is not None:
            bad += _check_range("quality_range", self.quality_range, lo=1, hi=100)
        if self.mask_feather_sigma < 0:
            bad.append(f"mask_feather_sigma must be non-negative, got {self.mask_feather_sigma}")
        if self.intersection_band_radius < 1:
            bad.append(
                f"intersection_band_radius must be at least 1, got {self.intersection_band_radius}"
            )
        if self.intersection_blur_sigma < 0:
            bad.append(
                f"intersection_blur_sigma must be non-negative, got {self.intersection_blur_sigma}"
            )
        if self.bbox_expand_fraction < 0:
            bad.append(
                f"bbox_expand_fraction must be non-negative, got {self.bbox_expand_fraction}"
            )
        if not 0.0 <= self.min_overlap_fraction <= 1.0:
            bad.append(
                f"min_overlap_fraction must be in [0, 1], got {self.min_overlap_fraction}"
            )
        if self.max_placement_attempts < 1:
            bad.append(
                f"max_placement_attempts must be at least 1, got {self.max_placement_attempts}"
            )
        return bad


@dataclass(frozen=True)
class NatOccConfig(OcclusionAugmentConfig):
    """Naturalistic pipeline settings on top of the shared knobs.

    ``category_weights`` biases occluder selection per category; None means
    uniform over the pool. ``color_transfer`` is "sot" or "none"; hands are
    recolored only under "sot".
    """

    hand_rotation_jitter: float = 15.0
    color_transfer: str = "sot"
    occluders_per_sample: int = 1
    category_weights: dict | None = None
    sot: sot.SotParams = field(default_factory=sot.SotParams)

    def validate(self) -> list[str]:
        bad = super().validate()
        if self.hand_rotation_jitter < 0:
            bad.append(
                f"hand_rotation_jitter must be non-negative, got {self.hand_rotation_jitter}"
            )
        if self.color_transfer not in ("sot", "none"):
            bad.append(f"color_transfer must be 'sot' or 'none', got {self.color_transfer!r}")
        if self.occluders_per_sample < 1:
            bad.append(
                f"occluders_per_sample must be at least 1, got {self.occluders_per_sample}"
            )
        if self.category_weights is not None:
            for key, val in self.category_weights.items():
                if key not in CATEGORIES:
                    bad.append(f"category_weights has unknown category {key!r}")
                elif not isinstance(val, (int, float)) or val < 0:
                    bad.append(f"category_weights[{key!r}] must be non-negative, got {val!r}")
            if isinstance(self.category_weights, dict) and all(
                not v for v in self.category_weights.values()
            ):
                bad.append("category_weights must not be all zero")
        bad += [f"sot: {msg}" for msg in self.sot.validate()]
        return bad


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def draw_scale(cfg: OcclusionAugmentConfig, seed) -> float:
    """One relative-size draw from ``scale_range``."""
    rng = _as_rng(seed)
    return float(rng.uniform(cfg.scale_range[0], cfg.scale_range[1]))


def _pad_for_rotation(
    image: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Grow the canvas to the bounding square of its diagonal.

    Rotation about the center then cannot push content off the canvas.
    """
    h, w = mask.shape
    side = int(math.ceil(math.hypot(h, w)))
    pad_y = side - h
    pad_x = side - w
    top, left = pad_y // 2, pad_x // 2
    image = np.pad(image, ((top, pad_y - top), (left, pad_x - left), (0, 0)))
    mask = np.pad(mask, ((top, pad_y - top), (left, pad_x - left)))
    return image, mask


def augment_occluder(
    occ: Occluder,
    face_dims: tuple[int, int],
    cfg: OcclusionAugmentConfig,
    seed,
    apply_compression: bool = True,
) -> Occluder:
    """Rescale and jitter an occluder before placement.

    Draw order per attempt: scale, rotation, shear, contrast, brightness,
    quality (the last only when ``quality_range`` is set; it is drawn even
    when ``apply_compression`` is off, so the stream a caller sees does not
    depend on that switch). The resize makes the occluder's longer side
    ``r`` times the face's longer side; rotation and shear warp image and
    mask together on a canvas padded so nothing clips; contrast, brightness
    and recompression touch only the image. Pixels outside the augmented
    support are re-zeroed so later feathered blending pulls black rather
    than photometric residue. If the support ends up empty the draw is
    retried, at most 5 times.
    """
    rng = _as_rng(seed)
    face_w, face_h = face_dims
    if face_w < 1 or face_h < 1:
        raise InputError(f"face dimensions must be positive, got {face_dims}")
    image = np.asarray(occ.image, dtype=np.float64)
    mask = np.asarray(occ.mask, dtype=np.float64)
    for _ in range(5):
        r = draw_scale(cfg, rng)
        rotation = float(rng.uniform(cfg.rotation_range[0], cfg.rotation_range[1]))
        shear = float(rng.uniform(cfg.shear_range[0], cfg.shear_range[1]))
        contrast = float(rng.uniform(cfg.contrast_range[0], cfg.contrast_range[1]))
        brightness = float(rng.uniform(cfg.brightness_range[0], cfg.brightness_range[1]))
        quality = None
        if cfg.quality_range is not None:
            quality = int(rng.integers(cfg.quality_range[0], cfg.quality_range[1] + 1))
        if not apply_compression:
            quality = None

        h, w = mask.shape
        target_long = max(1, int(round(r * max(face_w, face_h))))
        factor = target_long / max(w, h)
        new_w = max(1, int(round(w * factor)))
        new_h = max(1, int(round(h * factor)))
        img = imgcore.resize(image, new_w, new_h, "bilinear")
        msk = imgcore.resize(mask, new_w, new_h, "bilinear")

        direction = occ.finger_direction
        if rotation != 0.0 or shear != 0.0:
            img, msk = _pad_for_rotation(img, msk)
            img, msk = imgcore.affine_transform(
                img, msk, AffineParams(rotation=rotation, shear=shear), "bilinear"
            )
            if direction is not None:
                dx, dy = imgcore.rotate_vector(direction, rotation)
                norm = math.hypot(dx, dy)
                direction = (dx / norm, dy / norm)

        if contrast != 1.0 or brightness != 0.0:
            img = imgcore.photometric_adjust(img, contrast, brightness)
        if quality is not None:
            img = imgcore.lossy_recompress(img, quality)

        support = msk >= 0.5
        if support.any():
            img = img * support[:, :, None]
            return Occluder(
                id=occ.id,
                image=img,
                mask=msk,
                category=occ.category,
                finger_direction=direction,
                applied_scale=r,
            )
    raise GenerationError(
        f"occluder {occ.id!r} lost its support after 5 augmentation attempts"
    )


def orient_hand(
    occ: Occluder,
    placement_center: tuple[float, float],
    face_centroid: tuple[float, float],
    cfg: NatOccConfig,
    seed,
) -> float:
    """Rotation in degrees that points the fingers at the face centroid.

    The base angle turns ``finger_direction`` onto the vector from the
    placement center to the centroid; jitter of up to
    ``hand_rotation_jitter`` degrees either way is added. The result is
    normalized to (-180, 180].
    """
    if occ.category != "hand" or occ.finger_direction is None:
        raise InputError(f"orient_hand needs a hand occluder, got {occ.category!r}")
    rng = _as_rng(seed)
    vx = face_centroid[0] - placement_center[0]
    vy = face_centroid[1] - placement_center[1]
    base = math.degrees(
        math.atan2(vy, vx) - math.atan2(occ.finger_direction[1], occ.finger_direction[0])
    )
    jitter = float(rng.uniform(-cfg.hand_rotation_jitter, cfg.hand_rotation_jitter))
    angle = base + jitter
    angle = angle % 360.0
    if angle > 180.0:
        angle -= 360.0
    return angle


def _placed_overlap(face_mask: np.ndarray, occ_hard: np.ndarray, ox: int, oy: int) -> int:
    """Count face pixels under the occluder support at the given offset."""
    fh, fw = face_mask.shape
    oh, ow = occ_hard.shape
    x0, y0 = max(ox, 0), max(oy, 0)
    x1, y1 = min(ox + ow, fw), min(oy + oh, fh)
    if x0 >= x1 or y0 >= y1:
        return 0
    face_win = face_mask[y0:y1, x0:x1]
    occ_win = occ_hard[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
    return int(np.count_nonzero(face_win & occ_win))


def place_occluder(
    face: FaceSample,
    occ: Occluder,
    cfg: OcclusionAugmentConfig,
    seed,
) -> tuple[int, int]:
    """Sample an occluder offset that overlaps the face enough.

    Candidate centers are uniform over the face-mask bounding box expanded
    by ``bbox_expand_fraction`` per side. A candidate is accepted when the
    occluder support covers at least ``min_overlap_fraction`` of itself in
    face pixels; after ``max_placement_attempts`` rejections the best
    candidate seen wins. Returns the integer (x, y) canvas offset of the
    occluder's top-left corner.
    """
    rng = _as_rng(seed)
    hard = (np.asarray(occ.mask) >= 0.5).astype(np.uint8)
    total = int(hard.sum())
    if total == 0:
        raise InputError(f"occluder {occ.id!r} has an empty support")
    ys, xs = np.nonzero(face.face_mask)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    ex = cfg.bbox_expand_fraction * (x_hi - x_lo + 1.0)
    ey = cfg.bbox_expand_fraction * (y_hi - y_lo + 1.0)
    oh, ow = hard.shape
    needed = cfg.min_overlap_fraction * total
    best = None
    best_overlap = -1
    for _ in range(cfg.max_placement_attempts):
        cx = float(rng.uniform(x_lo - ex, x_hi + ex))
        cy = float(rng.uniform(y_lo - ey, y_hi + ey))
        ox = int(round(cx - ow / 2.0))
        oy = int(round(cy - oh / 2.0))
        overlap = _placed_overlap(face.face_mask, hard, ox, oy)
        if overlap >= needed:
            return (ox, oy)
        if overlap > best_overlap:
            best_overlap = overlap
            best = (ox, oy)
    return best


def _paste(canvas: np.ndarray, tile: np.ndarray, ox: int, oy: int) -> None:
    """Add a tile into a canvas at (ox, oy), clipping at the borders."""
    ch, cw = canvas.shape[:2]
    th, tw = tile.shape[:2]
    x0, y0 = max(ox, 0), max(oy, 0)
    x1, y1 = min(ox + tw, cw), min(oy + th, ch)
    if x0 >= x1 or y0 >= y1:
        return
    canvas[y0:y1, x0:x1] = tile[y0 - oy : y1 - oy, x0 - ox : x1 - ox]


def compose(
    face: FaceSample,
    occ: Occluder,
    offset: tuple[int, int],
    cfg: OcclusionAugmentConfig,
    global_alpha: float = 1.0,
) -> CompositeSample:
    """Blend a placed occluder over the face and derive the ground truth.

    The occluder's hard support (mask at or above 0.5) is feathered with a
    Gaussian of ``mask_feather_sigma`` and scaled by ``global_alpha`` to
    form the blend map. A band around the support edge, where it meets
    face pixels, is replaced by a slightly blurred composite to soften the
    paste seam. The ground truth counts a pixel as face only when the face
    mask holds it and the hard support does not; feathering and alpha
    never move the label boundary.
    """
    if not 0.0 <= global_alpha <= 1.0:
        raise InputError(f"global_alpha must be in [0, 1], got {global_alpha}")
    fh, fw = face.face_mask.shape
    occ_img = np.zeros((fh, fw, 3), dtype=np.float64)
    occ_soft = np.zeros((fh, fw), dtype=np.float64)
    ox, oy = int(offset[0]), int(offset[1])
    _paste(occ_img, np.asarray(occ.image, dtype=np.float64), ox, oy)
    _paste(occ_soft, np.asarray(occ.mask, dtype=np.float64), ox, oy)

    hard = (occ_soft >= 0.5).astype(np.uint8)
    feathered = imgcore.gaussian_blur(hard.astype(np.float64), cfg.mask_feather_sigma)
    composite = imgcore.alpha_blend(occ_img, face.image, feathered * global_alpha)

    r = cfg.intersection_band_radius
    if hard.any():
        band = (
            imgcore.morphology(hard, "dilate", r)
            & (1 - imgcore.morphology(hard, "erode", r))
            & imgcore.morphology(face.face_mask, "dilate", r)
        ).astype(bool)
        if band.any():
            softened = imgcore.gaussian_blur(composite, cfg.intersection_blur_sigma)
            composite = composite.copy()
            composite[band] = softened[band]

    gt_mask = (face.face_mask.astype(np.uint8) & (1 - hard)).astype(np.uint8)
    record = ManifestRecord(
        face_id=face.id,
        occluder_ids=[occ.id],
        alpha=float(global_alpha),
        scale=occ.applied_scale,
        placement=(ox, oy),
        status="ok",
    )
    return CompositeSample(image=composite, gt_mask=gt_mask, record=record)


def _mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    return (float(xs.mean()), float(ys.mean()))


def _pick_occluder(pool: Sequence, cfg: NatOccConfig, rng: np.random.Generator) -> Occluder:
    if cfg.category_weights is None:
        return pool[int(rng.integers(len(pool)))]
    if hasattr(pool, "category_of"):
        categories = [pool.category_of(i) for i in range(len(pool))]
    else:
        categories = [pool[i].category for i in range(len(pool))]
    weights = np.array([float(cfg.category_weights.get(c, 0.0)) for c in categories])
    total = weights.sum()
    if total <= 0:
        raise GenerationError("category_weights exclude every occluder in the pool")
    idx = int(rng.choice(len(pool), p=weights / total))
    return pool[idx]


def _recolor_hand(
    face: FaceSample, occ: Occluder, cfg: NatOccConfig, rng: np.random.Generator
) -> tuple[Occluder, sot.PreprocessReport]:
    """Transfer the face palette onto a hand without moving its geometry.

    The transport needs equal-cardinality pixel clouds, so the hand canvas
    is stretched to the face dimensions for the transfer, then the
    recolored result is mapped back onto the hand's own canvas and
    re-masked. The returned occluder therefore differs from the input in
    colors only; augmentation sees identical geometry whether or not the
    transfer ran.
    """
    fh, fw = face.face_mask.shape
    oh, ow = occ.mask.shape
    img = imgcore.resize(np.asarray(occ.image, dtype=np.float64), fw, fh, "bilinear")
    msk = imgcore.resize(np.asarray(occ.mask, dtype=np.float64), fw, fh, "bilinear")
    workspace_support = msk >= 0.5
    if not workspace_support.any():
        raise GenerationError(f"hand {occ.id!r} lost its support when matched to the face")
    img = img * workspace_support[:, :, None]
    prepped, report = sot.preprocess_source(face.image, img, cfg.sot, rng)
    recolored = sot.sot_color_transfer(prepped, img, cfg.sot, rng)
    recolored = imgcore.resize(recolored, ow, oh, "bilinear")
    support = np.asarray(occ.mask, dtype=np.float64) >= 0.5
    recolored = recolored * support[:, :, None]
    return (
        Occluder(
            id=occ.id,
            image=recolored,
            mask=np.asarray(occ.mask, dtype=np.float64),
            category="hand",
            finger_direction=occ.finger_direction,
        ),
        report,
    )


def _rotate_placed(occ: Occluder, angle: float) -> Occluder:
    """Rotate a finished occluder about its canvas center without clipping."""
    img, msk = _pad_for_rotation(np.asarray(occ.image, np.float64), np.asarray(occ.mask, np.float64))
    img, msk = imgcore.affine_transform(img, msk, AffineParams(rotation=angle), "bilinear")
    direction = None
    if occ.finger_direction is not None:
        dx, dy = imgcore.rotate_vector(occ.finger_direction, angle)
        norm = math.hypot(dx, dy)
        direction = (dx / norm, dy / norm)
    return Occluder(
        id=occ.id,
        image=img,
        mask=msk,
        category=occ.category,
        finger_direction=direction,
        applied_scale=occ.applied_scale,
    )


def generate_natocc_sample(
    face: FaceSample,
    occluder_pool: Sequence,
    cfg: NatOccConfig,
    seed,
) -> CompositeSample:
    """Generate one naturalistic occluded sample.

    Flow per occluder: pick from the pool, recolor hands via sliced
    optimal transport, augment, place, orient hands at the face centroid,
    composite. Hands skip the random rotation draw (orientation decides
    their angle) and skip recompression when they were recolored, so the
    transferred palette survives. With ``occluders_per_sample`` above 1
    the composite accumulates; the manifest records every occluder id and
    the first occluder's scale, alpha and placement.
    """
    if len(occluder_pool) == 0:
        raise InputError("occluder pool is empty")
    rng = _as_rng(seed)
    current = face
    ids: list[str] = []
    first_scale = None
    first_placement = None
    sot_report = None
    sample = None
    for step in range(cfg.occluders_per_sample):
        occ = _pick_occluder(occluder_pool, cfg, rng)
        used_sot = False
        if occ.category == "hand" and cfg.color_transfer == "sot":
            # forked stream: the transfer's draws must not shift the
            # geometry draws below, or gt would depend on color_transfer
            occ, report = _recolor_hand(current, occ, cfg, rng.spawn(1)[0])
            if sot_report is None:
                sot_report = report
            used_sot = True
        aug_cfg = cfg
        if occ.category == "hand":
            aug_cfg = replace(cfg, rotation_range=(0.0, 0.0))
        face_dims = (current.face_mask.shape[1], current.face_mask.shape[0])
        # recompression after the transfer would shift the palette back
        occ = augment_occluder(occ, face_dims, aug_cfg, rng, apply_compression=not used_sot)
        offset = place_occluder(current, occ, cfg, rng)
        if occ.category == "hand":
            oh, ow = occ.mask.shape
            center = (offset[0] + ow / 2.0, offset[1] + oh / 2.0)
            angle = orient_hand(occ, center, _mask_centroid(current.face_mask), cfg, rng)
            occ = _rotate_placed(occ, angle)
            nh, nw = occ.mask.shape
            offset = (int(round(center[0] - nw / 2.0)), int(round(center[1] - nh / 2.0)))
        sample = compose(current, occ, offset, cfg, 1.0)
        ids.append(occ.id)
        if first_scale is None:
            first_scale = occ.applied_scale
            first_placement = sample.record.placement
        if step + 1 < cfg.occluders_per_sample:
            if not sample.gt_mask.any():
                # fully covered face: stop stacking, the labels are final
                break
            # later occluders see the composited image; the visible-skin
            # labels shrink with every hard support
            current = FaceSample(face.id, sample.image, sample.gt_mask)
    record = ManifestRecord(
        pipeline="natocc",
        face_id=face.id,
        occluder_ids=ids,
        alpha=1.0,
        scale=first_scale,
        placement=first_placement,
        status="ok",
    )
    return CompositeSample(
        image=sample.image,
        gt_mask=sample.gt_mask,
        record=record,
        sot_report=sot_report,
    )
