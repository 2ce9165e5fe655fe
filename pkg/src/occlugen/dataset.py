"""Dataset assembly: catalogs, seeds, the generation engine.

A run is fully described by one :class:`GenerationConfig`. Every sample
gets its own RNG seeded from ``(global_seed, index)`` through a stateless
mixing function, so the stream a sample sees never depends on scheduling,
worker count or the fate of other samples. The engine writes a composite
and mask PNG per sample plus a JSONL manifest and a config snapshot; any
sample can later be regenerated bit for bit from those two files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shlex
import subprocess
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import imgcore
from .errors import ConfigError, GenerationError, InputError
from .manifest import ManifestRecord, read_manifest, write_manifest
from .natocc import FaceSample, NatOccConfig, Occluder, generate_natocc_sample
from .randocc import RandOccConfig, generate_randocc_sample

__all__ = [
    "GenerationConfig",
    "FaceCatalog",
    "OccluderCatalog",
    "TextureCatalog",
    "ingest_faces",
    "ingest_occluders",
    "ingest_textures",
    "derive_seed",
    "choose_pipeline",
    "config_to_dict",
    "config_from_dict",
    "config_hash",
    "run_generation",
    "regenerate_sample",
    "read_manifest",
    "write_manifest",
    "ManifestRecord",
]

log = logging.getLogger("occlugen.dataset")

PIPELINES = ("natocc", "randocc", "mix")


# ---------------------------------------------------------------------------
# per-sample seed derivation
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def derive_seed(global_seed: int, index: int) -> int:
    """Stateless per-sample seed, identical on every platform and process.

    Bit-exact contract, all arithmetic modulo 2**64:

        x = global_seed XOR (index * 0x9E3779B97F4A7C15)
        x = (x XOR (x >> 30)) * 0xBF58476D1CE4E5B9
        x = (x XOR (x >> 27)) * 0x94D049BB133111EB
        x = x XOR (x >> 31)

    The multiplier is odd and each step is invertible, so for a fixed
    global seed the map from index to seed is a bijection: distinct
    indices can never collide.
    """
    if not isinstance(index, (int, np.integer)) or isinstance(index, bool):
        raise InputError(f"index must be an integer, got {index!r}")
    if index < 0:
        raise InputError(f"index must be non-negative, got {index}")
    x = (int(global_seed) ^ (int(index) * _GOLDEN)) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


# ---------------------------------------------------------------------------
# catalogs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceEntry:
    id: str
    image_path: str
    mask_path: str


@dataclass(frozen=True)
class OccluderEntry:
    id: str
    image_path: str
    mask_path: str
    category: str
    finger_direction: tuple[float, float] | None = None


@dataclass(frozen=True)
class TextureEntry:
    id: str
    image_path: str


class _LruCache:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: OrderedDict = OrderedDict()

    def get(self, key, loader):
        if key in self._items:
            self._items.move_to_end(key)
            return self._items[key]
        value = loader()
        self._items[key] = value
        while len(self._items) > self.capacity:
            self._items.popitem(last=False)
        return value


class FaceCatalog:
    """Validated face/mask pairs, loaded lazily and cached."""

    def __init__(self, entries: list[FaceEntry], diagnostics: list[str] | None = None):
        self.entries = list(entries)
        self.diagnostics = list(diagnostics or [])
        self._cache = _LruCache(16)

    def __len__(self) -> int:
        return len(self.entries)

    def load(self, i: int) -> FaceSample:
        entry = self.entries[i]

        def _load():
            image = imgcore.read_image_png(entry.image_path)
            mask = imgcore.read_binary_mask_png(entry.mask_path)
            return FaceSample(id=entry.id, image=image, face_mask=mask)

        return self._cache.get(entry.id, _load)


class OccluderCatalog:
    def __init__(self, entries: list[OccluderEntry], diagnostics: list[str] | None = None):
        self.entries = sorted(entries, key=lambda e: (e.category, e.id))
        self.diagnostics = list(diagnostics or [])
        self._cache = _LruCache(4)

    def __len__(self) -> int:
        return len(self.entries)

    def category_of(self, i: int) -> str:
        return self.entries[i].category

    def __getitem__(self, i: int) -> Occluder:
        entry = self.entries[i]

        def _load():
            image = imgcore.read_image_png(entry.image_path)
            mask = imgcore.read_soft_mask_png(entry.mask_path)
            return Occluder(
                id=entry.id,
                image=image,
                mask=mask,
                category=entry.category,
                finger_direction=entry.finger_direction,
            )

        return self._cache.get(entry.id, _load)


class TextureCatalog:
    def __init__(self, entries: list[TextureEntry], diagnostics: list[str] | None = None):
        self.entries = sorted(entries, key=lambda e: e.id)
        self.diagnostics = list(diagnostics or [])
        self._cache = _LruCache(8)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int):
        entry = self.entries[i]
        return (entry.id, self._cache.get(entry.id, lambda: imgcore.read_image_png(entry.image_path)))


def _png_header_size(path: Path):
    """Image dimensions from the file header without decoding pixel data."""
    with Image.open(path) as im:
        return im.size


def _mask_has_support(path: Path) -> bool:
    """True when at least one pixel survives binarization at 128."""
    with Image.open(path) as im:
        return bool((np.asarray(im.convert("L")) >= 128).any())


def _scan_pairs(root: Path, diagnostics: list[str]):
    """Collect matching-basename pairs from ``root/img`` and ``root/mask``.

    Pairs with a missing counterpart, unreadable files, mismatched
    dimensions or an empty mask are dropped, each with a diagnostic
    naming the offending file. Image pixel data is never decoded here;
    masks are decoded once for the emptiness check and discarded.
    """
    img_dir = root / "img"
    mask_dir = root / "mask"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise InputError(f"{root} must contain img/ and mask/ subdirectories")
    images = {f.stem: f for f in sorted(img_dir.iterdir()) if f.is_file() and f.suffix.lower() == ".png"}
    masks = {f.stem: f for f in sorted(mask_dir.iterdir()) if f.is_file() and f.suffix.lower() == ".png"}
    pairs = []
    for stem in sorted(images):
        if stem not in masks:
            diagnostics.append(f"{images[stem]}: image has no matching mask, skipped")
            continue
        image_path, mask_path = images[stem], masks[stem]
        try:
            isize = _png_header_size(image_path)
            msize = _png_header_size(mask_path)
            empty = not _mask_has_support(mask_path)
        except Exception as exc:
            diagnostics.append(f"{image_path}: unreadable pair ({exc}), skipped")
            continue
        if isize != msize:
            diagnostics.append(
                f"{image_path}: image is {isize[0]}x{isize[1]} but mask is "
                f"{msize[0]}x{msize[1]}, skipped"
            )
            continue
        if empty:
            diagnostics.append(f"{mask_path}: mask has no labeled pixels, skipped")
            continue
        pairs.append((stem, image_path, mask_path))
    for stem in sorted(masks):
        if stem not in images:
            diagnostics.append(f"{masks[stem]}: mask has no matching image, skipped")
    return pairs


def ingest_faces(path) -> FaceCatalog:
    """Build a face catalog from ``<dir>/img`` and ``<dir>/mask``.

    Basenames pair the two trees. Unmatched, unreadable, size-mismatched
    or empty-mask entries are skipped with a diagnostic naming the file;
    an empty result is fatal. Pixel data loads lazily at generation time.
    """
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"face directory {root} does not exist")
    diagnostics: list[str] = []
    pairs = _scan_pairs(root, diagnostics)
    for msg in diagnostics:
        log.warning("%s", msg)
    if not pairs:
        raise InputError(f"no usable face pairs in {root}")
    entries = [FaceEntry(stem, str(img), str(msk)) for stem, img, msk in pairs]
    return FaceCatalog(entries, diagnostics)


_OCCLUDER_CATEGORIES = ("hand", "object")
_CANONICAL_FINGERS = (0.0, -1.0)


def _read_finger_map(meta: Path) -> dict[str, tuple[float, float]]:
    fingers: dict[str, tuple[float, float]] = {}
    try:
        raw = json.loads(meta.read_text())
        for key, vec in raw.items():
            dx, dy = float(vec[0]), float(vec[1])
            norm = (dx * dx + dy * dy) ** 0.5
            if norm == 0:
                raise ValueError(f"zero finger vector for {key}")
            fingers[key] = (dx / norm, dy / norm)
    except (ValueError, TypeError, KeyError, IndexError, json.JSONDecodeError) as exc:
        raise InputError(f"{meta}: malformed finger metadata: {exc}") from exc
    return fingers


def ingest_occluders(path) -> OccluderCatalog:
    """Scan per-category occluder libraries under one root.

    Layout: ``<root>/<category>/img/<id>.png`` plus a matching
    ``mask/<id>.png``; categories are the directory names, currently
    ``hand`` and ``object`` (other names are skipped with a diagnostic).
    A hand category may carry ``meta.json`` mapping id to a finger
    direction vector, normalized on ingest; ids without an entry use the
    canonical straight-up pose ``(0, -1)``.
    """
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"occluder directory {root} does not exist")
    diagnostics: list[str] = []
    entries: list[OccluderEntry] = []
    for subdir in sorted(p for p in root.iterdir() if p.is_dir()):
        category = subdir.name
        if category not in _OCCLUDER_CATEGORIES:
            diagnostics.append(f"{subdir}: unknown occluder category, skipped")
            continue
        fingers: dict[str, tuple[float, float]] = {}
        if category == "hand":
            meta = subdir / "meta.json"
            if meta.exists():
                fingers = _read_finger_map(meta)
        for stem, img, msk in _scan_pairs(subdir, diagnostics):
            finger = None
            if category == "hand":
                finger = fingers.get(stem, _CANONICAL_FINGERS)
            entries.append(OccluderEntry(stem, str(img), str(msk), category, finger))
    for msg in diagnostics:
        log.warning("%s", msg)
    if not entries:
        raise InputError(
            f"no usable occluders under {root} (expected hand/ or object/ category directories)"
        )
    return OccluderCatalog(entries, diagnostics)


def ingest_textures(path) -> TextureCatalog:
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"texture directory {root} does not exist")
    diagnostics: list[str] = []
    entries: list[TextureEntry] = []
    for f in sorted(root.iterdir()):
        if not f.is_file() or f.suffix.lower() != ".png":
            continue
        try:
            _png_header_size(f)
        except Exception as exc:
            diagnostics.append(f"{f}: unreadable texture ({exc}), skipped")
            continue
        entries.append(TextureEntry(f.stem, str(f)))
    for msg in diagnostics:
        log.warning("%s", msg)
    if not entries:
        raise InputError(f"no usable textures in {root}")
    return TextureCatalog(entries, diagnostics)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class GenerationConfig:
    """Everything that defines a run.

    ``config_hash`` covers only the fields that shape pixels and labels:
    pipeline, count, global_seed, mix_weights, postprocess_cmd and both
    pipeline sections. Worker count and filesystem paths are excluded so
    the same dataset generated elsewhere, or with different parallelism,
    hashes identically.
    """

    pipeline: str = "natocc"
    count: int = 1
    global_seed: int = 0
    workers: int = 1
    mix_weights: dict = field(default_factory=lambda: {"natocc": 1.0, "randocc": 1.0})
    faces_dir: str = "faces"
    occluders_dir: str = "occluders"
    textures_dir: str = "textures"
    output_dir: str = "out"
    postprocess_cmd: str | None = None
    natocc: NatOccConfig = field(default_factory=NatOccConfig)
    randocc: RandOccConfig = field(default_factory=RandOccConfig)

    def validate(self) -> list[str]:
        bad = []
        if self.pipeline not in PIPELINES:
            bad.append(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if not isinstance(self.count, int) or self.count < 1:
            bad.append(f"count must be a positive integer, got {self.count!r}")
        if not isinstance(self.global_seed, int):
            bad.append(f"global_seed must be an integer, got {self.global_seed!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            bad.append(f"workers must be a positive integer, got {self.workers!r}")
        if self.pipeline == "mix":
            unknown = [k for k in self.mix_weights if k not in ("natocc", "randocc")]
            if unknown:
                bad.append(f"mix_weights has unknown pipelines {unknown}")
            weights = [v for k, v in self.mix_weights.items() if k in ("natocc", "randocc")]
            if any(not isinstance(v, (int, float)) or v < 0 for v in weights):
                bad.append(f"mix_weights must be non-negative numbers, got {self.mix_weights}")
            elif sum(weights) <= 0:
                bad.append("mix_weights must sum to a positive value")
        if self.postprocess_cmd is not None and not isinstance(self.postprocess_cmd, str):
            bad.append(f"postprocess_cmd must be a string or null, got {self.postprocess_cmd!r}")
        bad += [f"natocc.{msg}" for msg in self.natocc.validate()]
        bad += [f"randocc.{msg}" for msg in self.randocc.validate()]
        return bad


def config_to_dict(config: GenerationConfig) -> dict:
    """JSON-ready dict; the inverse of :func:`config_from_dict`."""
    return dataclasses.asdict(config)


def _build_section(cls, data: dict, prefix: str, errors: list[str]):
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            errors.append(f"{prefix}{key}: unknown key")
            continue
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, InputError) as exc:
        errors.append(f"{prefix.rstrip('.') or 'config'}: {exc}")
        return cls()


def config_from_dict(data: dict) -> GenerationConfig:
    """Build and fully validate a config from parsed JSON.

    Raises :class:`ConfigError` carrying every violation found: unknown
    keys (with their dotted path), malformed values and semantic range
    problems, all in one pass.
    """
    if not isinstance(data, dict):
        raise ConfigError(["top-level config must be a JSON object"])
    errors: list[str] = []
    data = dict(data)
    natocc_raw = data.pop("natocc", {})
    randocc_raw = data.pop("randocc", {})
    if not isinstance(natocc_raw, dict):
        errors.append("natocc: must be an object")
        natocc_raw = {}
    if not isinstance(randocc_raw, dict):
        errors.append("randocc: must be an object")
        randocc_raw = {}
    sot_raw = natocc_raw.pop("sot", None)
    natocc_cfg = _build_section(NatOccConfig, natocc_raw, "natocc.", errors)
    if sot_raw is not None:
        if not isinstance(sot_raw, dict):
            errors.append("natocc.sot: must be an object")
        else:
            from .sot import SotParams

            sot_cfg = _build_section(SotParams, sot_raw, "natocc.sot.", errors)
            natocc_cfg = dataclasses.replace(natocc_cfg, sot=sot_cfg)
    randocc_cfg = _build_section(RandOccConfig, randocc_raw, "randocc.", errors)
    config = _build_section(GenerationConfig, data, "", errors)
    config = dataclasses.replace(config, natocc=natocc_cfg, randocc=randocc_cfg)
    errors += config.validate()
    if errors:
        raise ConfigError(errors)
    return config


_HASH_EXCLUDED = ("workers", "faces_dir", "occluders_dir", "textures_dir", "output_dir")


def config_hash(config: GenerationConfig) -> str:
    """SHA-256 over the canonical JSON of the semantic config fields."""
    semantic = config_to_dict(config)
    for key in _HASH_EXCLUDED:
        semantic.pop(key)
    canonical = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def choose_pipeline(config: GenerationConfig, rng: np.random.Generator) -> str:
    """Pipeline for one sample; under ``mix`` a weighted draw from the
    sample's own stream."""
    if config.pipeline != "mix":
        return config.pipeline
    w_nat = float(config.mix_weights.get("natocc", 0.0))
    w_rand = float(config.mix_weights.get("randocc", 0.0))
    u = rng.random() * (w_nat + w_rand)
    return "natocc" if u < w_nat else "randocc"


# ---------------------------------------------------------------------------
# generation engine
# ---------------------------------------------------------------------------


class _RunContext:
    """Catalogs and run constants shared by every sample in one process."""

    def __init__(self, config, faces, occluders, textures, chash, out_dir, id_width):
        self.config = config
        self.faces = faces
        self.occluders = occluders
        self.textures = textures
        self.chash = chash
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.id_width = id_width


def _generate_sample(ctx: _RunContext, index: int):
    """Build sample ``index`` in memory. Deterministic in (config, index)."""
    config = ctx.config
    seed = derive_seed(config.global_seed, index)
    rng = np.random.default_rng(seed)
    pipeline = choose_pipeline(config, rng)
    face_entry = ctx.faces.entries[index % len(ctx.faces)]
    sample_id = format(index, f"0{ctx.id_width}d")
    try:
        face = ctx.faces.load(index % len(ctx.faces))
        if pipeline == "natocc":
            sample = generate_natocc_sample(face, ctx.occluders, config.natocc, rng)
        else:
            sample = generate_randocc_sample(face, ctx.textures, config.randocc, rng)
    except GenerationError as exc:
        log.warning("sample %s skipped: %s", sample_id, exc)
        record = ManifestRecord(
            sample_id=sample_id,
            pipeline=pipeline,
            face_id=face_entry.id,
            occluder_ids=[],
            seed=seed,
            alpha=None,
            scale=None,
            placement=None,
            config_hash=ctx.chash,
            status="skipped",
        )
        return record, None
    record = dataclasses.replace(
        sample.record, sample_id=sample_id, seed=seed, config_hash=ctx.chash
    )
    return record, sample


def _run_postprocess(cmd_template: str, image_path: Path, mask_path: Path, sample_id: str):
    cmd = [
        part.format(image=image_path, mask=mask_path, id=sample_id)
        for part in shlex.split(cmd_template)
    ]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        raise GenerationError(
            f"postprocess command failed for {sample_id} "
            f"(exit {result.returncode}): {result.stderr.strip()}"
        )


def _generate_and_write(ctx: _RunContext, index: int) -> ManifestRecord:
    record, sample = _generate_sample(ctx, index)
    if sample is None:
        return record
    image_path = ctx.out_dir / "images" / f"{record.sample_id}.png"
    mask_path = ctx.out_dir / "masks" / f"{record.sample_id}.png"
    imgcore.write_image_png(image_path, sample.image)
    imgcore.write_mask_png(mask_path, sample.gt_mask)
    if ctx.config.postprocess_cmd:
        try:
            _run_postprocess(ctx.config.postprocess_cmd, image_path, mask_path, record.sample_id)
        except GenerationError as exc:
            log.warning("%s", exc)
            image_path.unlink(missing_ok=True)
            mask_path.unlink(missing_ok=True)
            return dataclasses.replace(
                record, status="skipped", alpha=None, scale=None, placement=None, occluder_ids=[]
            )
    return record


_WORKER_CTX: _RunContext | None = None


def _worker_init(config, face_entries, occ_entries, tex_entries, chash, out_dir, id_width):
    global _WORKER_CTX
    _WORKER_CTX = _RunContext(
        config,
        FaceCatalog(face_entries),
        OccluderCatalog(occ_entries),
        TextureCatalog(tex_entries),
        chash,
        out_dir,
        id_width,
    )


def _worker_generate(index: int) -> ManifestRecord:
    return _generate_and_write(_WORKER_CTX, index)


def _build_context(config: GenerationConfig, chash: str, out_dir) -> _RunContext:
    faces = ingest_faces(config.faces_dir)
    if config.pipeline in ("natocc", "mix"):
        occluders = ingest_occluders(config.occluders_dir)
    else:
        occluders = OccluderCatalog([])
    if config.pipeline in ("randocc", "mix"):
        textures = ingest_textures(config.textures_dir)
    else:
        textures = TextureCatalog([])
    id_width = max(6, len(str(config.count - 1)))
    return _RunContext(config, faces, occluders, textures, chash, out_dir, id_width)


def run_generation(config: GenerationConfig, force: bool = False) -> list[ManifestRecord]:
    """Generate a dataset into ``config.output_dir``.

    Layout: ``images/``, ``masks/``, ``manifest.jsonl`` and
    ``config.snapshot`` (itself a valid config file). Refuses to touch an
    output directory that already holds a run unless ``force`` is set.
    Sample order in the manifest is generation order regardless of worker
    count, and records are identical whether the run was serial or parallel.
    """
    errors = config.validate()
    if errors:
        raise ConfigError(errors)
    out = Path(config.output_dir)
    if not force and ((out / "manifest.jsonl").exists() or (out / "config.snapshot").exists()):
        raise GenerationError(
            f"output directory {out} already holds a run (rerun with force to overwrite)"
        )
    chash = config_hash(config)
    ctx = _build_context(config, chash, out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    snapshot = json.dumps(config_to_dict(config), sort_keys=True, indent=2)
    (out / "config.snapshot").write_text(snapshot + "\n", encoding="utf-8")

    if config.workers == 1:
        records = [_generate_and_write(ctx, i) for i in range(config.count)]
    else:
        chunk = max(1, config.count // (config.workers * 4))
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_worker_init,
            initargs=(
                config,
                ctx.faces.entries,
                ctx.occluders.entries,
                ctx.textures.entries,
                chash,
                str(out),
                ctx.id_width,
            ),
        ) as pool:
            records = list(pool.map(_worker_generate, range(config.count), chunksize=chunk))
    write_manifest(records, out / "manifest.jsonl")
    skipped = sum(1 for r in records if r.status == "skipped")
    log.info("generated %d samples (%d skipped) into %s", len(records), skipped, out)
    return records


def regenerate_sample(config: GenerationConfig, index: int):
    """Rebuild one sample in memory from a config, without writing.

    Used by inspection to prove a stored sample is reproducible. Returns
    ``(record, sample)``; ``sample`` is None when the draw was skipped.
    """
    errors = config.validate()
    if errors:
        raise ConfigError(errors)
    if not 0 <= index < config.count:
        raise InputError(f"index {index} outside the run's range [0, {config.count - 1}]")
    ctx = _build_context(config, config_hash(config), None)
    return _generate_sample(ctx, index)
