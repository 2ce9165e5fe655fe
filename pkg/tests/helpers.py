"""Shared builders for the test suite: images, occluders, input trees."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from occlugen import imgcore
from occlugen.natocc import FaceSample, Occluder


def smooth_image(w: int, h: int, seed=0, low=0.1, high=0.9) -> np.ndarray:
    """Random RGB image with gentle spatial structure, values in [low, high]."""
    rng = np.random.default_rng(seed)
    img = imgcore.gaussian_blur(rng.random((h, w, 3)), 2.0)
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        img = (img - lo) / (hi - lo)
    return low + (high - low) * img


def ellipse_mask(w: int, h: int, rx: float = 0.38, ry: float = 0.42) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    inside = ((xx - cx) / (rx * w)) ** 2 + ((yy - cy) / (ry * h)) ** 2 <= 1.0
    return inside.astype(np.uint8)


def make_face(w: int = 96, h: int = 96, seed: int = 0, full_mask: bool = False) -> FaceSample:
    mask = np.ones((h, w), dtype=np.uint8) if full_mask else ellipse_mask(w, h)
    return FaceSample(id=f"face{seed:02d}", image=smooth_image(w, h, seed), face_mask=mask)


def make_hand(w: int = 64, h: int = 48, seed: int = 0) -> Occluder:
    mask = ellipse_mask(w, h, rx=0.35, ry=0.40).astype(np.float64)
    img = smooth_image(w, h, seed + 1000, low=0.45, high=0.85)
    img = img * (mask >= 0.5)[:, :, None]
    return Occluder(
        id=f"hand{seed:02d}",
        image=img,
        mask=mask,
        category="hand",
        finger_direction=(0.0, -1.0),
    )


def make_object(w: int = 40, h: int = 40, seed: int = 0) -> Occluder:
    mask = np.zeros((h, w), dtype=np.float64)
    mask[h // 5 : h - h // 5, w // 5 : w - w // 5] = 1.0
    img = smooth_image(w, h, seed + 2000) * (mask >= 0.5)[:, :, None]
    return Occluder(id=f"obj{seed:02d}", image=img, mask=mask, category="object")


def write_soft_mask(path, mask: np.ndarray) -> None:
    """Store a soft [0, 1] mask as 8-bit grayscale."""
    arr = imgcore.to_uint8(np.asarray(mask, dtype=np.float64))
    Image.fromarray(arr, mode="L").save(path)


def build_input_tree(
    root,
    faces: int = 3,
    face_size: tuple[int, int] = (96, 96),
    hands: int = 1,
    objects: int = 1,
    textures: int = 2,
) -> Path:
    """Write a complete generation input tree under ``root``."""
    root = Path(root)
    w, h = face_size
    (root / "faces" / "img").mkdir(parents=True)
    (root / "faces" / "mask").mkdir(parents=True)
    for i in range(faces):
        face = make_face(w, h, seed=i)
        imgcore.write_image_png(root / "faces" / "img" / f"{face.id}.png", face.image)
        imgcore.write_mask_png(root / "faces" / "mask" / f"{face.id}.png", face.face_mask)
    for count, builder, category in ((hands, make_hand, "hand"), (objects, make_object, "object")):
        if not count:
            continue
        cdir = root / "occluders" / category
        (cdir / "img").mkdir(parents=True)
        (cdir / "mask").mkdir(parents=True)
        for i in range(count):
            occ = builder(seed=i)
            imgcore.write_image_png(cdir / "img" / f"{occ.id}.png", occ.image)
            write_soft_mask(cdir / "mask" / f"{occ.id}.png", occ.mask)
        if category == "hand":
            meta = {f"hand{i:02d}": [0, -1] for i in range(count)}
            (cdir / "meta.json").write_text(json.dumps(meta))
    if textures:
        (root / "textures").mkdir(parents=True)
        for i in range(textures):
            tex = smooth_image(64, 64, seed=500 + i)
            imgcore.write_image_png(root / "textures" / f"tex{i:02d}.png", tex)
    return root


def tree_config(root, out, **overrides) -> dict:
    """Config dict pointing at a built input tree."""
    cfg = {
        "pipeline": "mix",
        "count": 4,
        "global_seed": 0,
        "workers": 1,
        "faces_dir": str(Path(root) / "faces"),
        "occluders_dir": str(Path(root) / "occluders"),
        "textures_dir": str(Path(root) / "textures"),
        "output_dir": str(out),
    }
    cfg.update(overrides)
    return cfg


def ks_statistic_uniform(samples, lo: float, hi: float) -> float:
    """Exact Kolmogorov-Smirnov statistic against Uniform[lo, hi]."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    cdf = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))
