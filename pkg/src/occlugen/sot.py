"""Color transfer between pixel clouds via sliced optimal transport.

The transfer treats the RGB pixels of two same-sized images as 3D point
clouds and iteratively advects the target cloud toward the source cloud.
Each round projects both clouds onto a random orthonormal basis and moves
every target point along each axis by the displacement between the sorted
projections, which is the exact 1D optimal transport map.

A dark-pixel preprocessing step runs on the source first so that large
black regions (background, hair) do not drag the transferred palette
toward black.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "SotParams",
    "PreprocessReport",
    "preprocess_source",
    "sot_color_transfer",
    "sliced_wasserstein",
]


@dataclass(frozen=True)
class SotParams:
    """Knobs for preprocessing and the transport loop.

    ``lower_thresh`` marks source pixels as near-black, ``upper_thresh``
    caps the brightest values after preprocessing. ``subsample_limit``
    bounds the cloud size used for the sort; pixels beyond the limit follow
    an interpolated version of each directional map. ``literal_replacement``
    switches the dark-pixel replacement count to the raw ``ratio - 1``
    fraction instead of the count-equalizing fraction.
    """

    lower_thresh: float = 10.0 / 255.0
    upper_thresh: float = 240.0 / 255.0
    iterations: int = 64
    step_size: float = 1.0
    subsample_limit: int | None = None
    literal_replacement: bool = False

    def validate(self) -> list[str]:
        bad = []
        if not 0.0 <= self.lower_thresh < self.upper_thresh <= 1.0:
            bad.append(
                "thresholds must satisfy 0 <= lower_thresh < upper_thresh <= 1, "
                f"got ({self.lower_thresh}, {self.upper_thresh})"
            )
        if self.iterations < 1:
            bad.append(f"iterations must be at least 1, got {self.iterations}")
        if not 0.0 < self.step_size <= 1.0:
            bad.append(f"step_size must be in (0, 1], got {self.step_size}")
        if self.subsample_limit is not None and self.subsample_limit < 2:
            bad.append(f"subsample_limit must be at least 2, got {self.subsample_limit}")
        return bad


@dataclass(frozen=True)
class PreprocessReport:
    """What the dark-pixel replacement actually did."""

    s_quantity: int
    t_quantity: int
    black_ratio: float
    replaced_count: int
    replacement_color: tuple[float, float, float]


def _require_valid(params: SotParams) -> None:
    bad = params.validate()
    if bad:
        raise InputError("; ".join(bad))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def preprocess_source(
    source: np.ndarray,
    target: np.ndarray,
    params: SotParams = SotParams(),
    seed=0,
) -> tuple[np.ndarray, PreprocessReport]:
    """Replace excess near-black source pixels before color transfer.

    The source (face) usually carries far more dark pixels than the target
    (hand) canvas, whose only exact-zero pixels are its transparent
    background. Transferring that imbalance would darken the recolored
    hand, so when the dark-to-zero ratio exceeds 1 a random subset of the
    dark source pixels is repainted with the mean color of the non-dark
    pixels, bringing the dark count down to the target's zero count. With
    ``literal_replacement`` the repainted fraction is ``ratio - 1`` of the
    dark pixels instead. All channels are finally clipped to
    ``upper_thresh``.

    Returns the adjusted source copy and a report of the counts involved.
    ``seed`` drives the subset choice; the source and target must share
    dimensions.
    """
    _require_valid(params)
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 3 or source.shape[2] != 3:
        raise InputError(f"source must have shape (H, W, 3), got {source.shape}")
    if source.shape != target.shape:
        raise InputError(
            f"source and target dimensions must match, got {source.shape} vs {target.shape}"
        )
    dark = source.max(axis=2) < params.lower_thresh
    s_quantity = int(dark.sum())
    t_quantity = int((target == 0.0).all(axis=2).sum())

    if t_quantity > 0:
        black_ratio = s_quantity / t_quantity
    else:
        black_ratio = float("inf") if s_quantity > 0 else 0.0

    bright = source[~dark]
    if bright.size:
        replacement = bright.mean(axis=0)
    else:
        replacement = np.zeros(3)

    out = source.copy()
    replaced = 0
    if black_ratio > 1.0 and s_quantity > 0 and bright.size:
        if params.literal_replacement:
            frac = min(1.0, black_ratio - 1.0)
            replaced = int(round(frac * s_quantity))
        else:
            # equalize counts: keep exactly t_quantity dark pixels
            replaced = s_quantity - t_quantity
        if replaced > 0:
            rng = _as_rng(seed)
            ys, xs = np.nonzero(dark)
            chosen = rng.choice(s_quantity, size=replaced, replace=False)
            out[ys[chosen], xs[chosen]] = replacement
    out = np.minimum(out, params.upper_thresh)
    report = PreprocessReport(
        s_quantity=s_quantity,
        t_quantity=t_quantity,
        black_ratio=black_ratio,
        replaced_count=replaced,
        replacement_color=tuple(float(c) for c in replacement),
    )
    return out, report


def _random_orthonormal_basis(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform random rotation of R^3, columns are the directions."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    # QR alone is not Haar-uniform; fixing the sign of R's diagonal is.
    q = q * np.sign(np.diag(r))[None, :]
    return q


def sot_color_transfer(
    source: np.ndarray,
    target: np.ndarray,
    params: SotParams = SotParams(),
    seed=0,
) -> np.ndarray:
    """Advect the target image's pixel cloud toward the source palette.

    Per iteration a fresh random orthonormal basis is drawn; for each of
    its three directions both clouds are projected and sorted, and each
    target pixel accumulates the displacement between its rank in the
    target projection and the same rank in the source projection. The
    summed displacement, scaled by ``step_size``, is applied in RGB space.
    The result is clipped to [0, 1] and reshaped to the target's geometry.

    With a full step the per-direction displacement is the exact 1D
    transport map, so the sliced Wasserstein distance between the clouds
    is non-increasing over iterations.
    """
    _require_valid(params)
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 3 or source.shape[2] != 3:
        raise InputError(f"source must have shape (H, W, 3), got {source.shape}")
    if source.shape != target.shape:
        raise InputError(
            f"source and target dimensions must match, got {source.shape} vs {target.shape}"
        )
    rng = _as_rng(seed)
    shape = target.shape
    s = source.reshape(-1, 3)
    t = target.reshape(-1, 3).copy()
    n = t.shape[0]

    limit = params.subsample_limit
    if limit is not None and n > limit:
        s_idx = rng.choice(n, size=limit, replace=False)
        t_idx = rng.choice(n, size=limit, replace=False)
    else:
        s_idx = t_idx = None

    for _ in range(params.iterations):
        basis = _random_orthonormal_basis(rng)
        proj_s = s @ basis
        proj_t = t @ basis
        disp = np.empty_like(proj_t)
        for c in range(3):
            if s_idx is None:
                src_sorted = np.sort(proj_s[:, c])
                order = np.argsort(proj_t[:, c], kind="stable")
                disp[order, c] = src_sorted - proj_t[order, c]
            else:
                # rank map fitted on the subsample, applied to every pixel
                src_sorted = np.sort(proj_s[s_idx, c])
                tgt_sorted = np.sort(proj_t[t_idx, c])
                mapped = np.interp(proj_t[:, c], tgt_sorted, src_sorted)
                disp[:, c] = mapped - proj_t[:, c]
        t += params.step_size * (disp @ basis.T)
    return np.clip(t, 0.0, 1.0).reshape(shape)


def sliced_wasserstein(
    a: np.ndarray,
    b: np.ndarray,
    n_dirs: int = 64,
    seed=0,
    directions: np.ndarray | None = None,
) -> float:
    """Monte Carlo sliced 1-Wasserstein distance between two point clouds.

    Each cloud is flattened to (N, 3); both must hold the same number of
    points. For every unit direction the clouds are projected and sorted
    and the mean absolute rank difference taken; the result is the mean
    over directions. ``directions`` overrides the seeded random sampling
    when an exact set of projection axes is wanted.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InputError("point clouds must be non-empty")
    if a.shape[0] != b.shape[0]:
        raise InputError(
            f"point clouds must hold the same number of points, got {a.shape[0]} vs {b.shape[0]}"
        )
    if directions is None:
        if n_dirs < 1:
            raise InputError(f"n_dirs must be at least 1, got {n_dirs}")
        rng = _as_rng(seed)
        directions = rng.standard_normal((n_dirs, 3))
    else:
        directions = np.asarray(directions, dtype=np.float64)
        if directions.ndim != 2 or directions.shape[1] != 3:
            raise InputError(f"directions must have shape (K, 3), got {directions.shape}")
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InputError("directions must be non-zero vectors")
    directions = directions / norms
    # project as (K, N) so each direction's values are contiguous; sorting
    # along the fast axis is several times quicker for large clouds
    pa = np.sort(directions @ a.T, axis=1)
    pb = np.sort(directions @ b.T, axis=1)
    return float(np.mean(np.abs(pa - pb)))
