"""Deterministic synthetic occluded-face segmentation datasets.

Two generation pipelines (naturalistic cutout compositing and procedural
textured shapes), pixel-exact two-class ground truth, reproducible
manifests and a segmentation metrics evaluator.
"""

from .errors import ConfigError, GenerationError, InputError, OcclugenError
from .imgcore import (
    AffineParams,
    affine_transform,
    alpha_blend,
    gaussian_blur,
    lossy_recompress,
    morphology,
    photometric_adjust,
    resize,
)
from .manifest import ManifestRecord, read_manifest, write_manifest
from .metrics import (
    ConfusionMatrix,
    accumulate,
    fw_iou,
    iou_per_class,
    mean_iou,
    pixel_accuracy,
)
from .natocc import (
    CompositeSample,
    FaceSample,
    NatOccConfig,
    Occluder,
    augment_occluder,
    compose,
    generate_natocc_sample,
    orient_hand,
    place_occluder,
)
from .randocc import (
    RandOccConfig,
    assign_transparency,
    generate_randocc_sample,
    random_shape,
    texture_fill,
)
from .sot import (
    PreprocessReport,
    SotParams,
    preprocess_source,
    sliced_wasserstein,
    sot_color_transfer,
)
from .dataset import (
    GenerationConfig,
    config_hash,
    derive_seed,
    ingest_faces,
    ingest_occluders,
    ingest_textures,
    run_generation,
)

__version__ = "0.1.0"
