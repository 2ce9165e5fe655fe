"""Manifest records and their JSONL serialization.

One line per sample, in generation order, with every random decision that
shaped the sample. A manifest row plus the config snapshot is enough to
regenerate the sample bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError

__all__ = ["ManifestRecord", "write_manifest", "read_manifest"]

_FIELDS = (
    "sample_id",
    "pipeline",
    "face_id",
    "occluder_ids",
    "seed",
    "alpha",
    "scale",
    "placement",
    "config_hash",
    "status",
)


@dataclass
class ManifestRecord:
    """Provenance of one generated sample.

    ``placement`` is the (x, y) offset of the occluder canvas origin on the
    face canvas. ``alpha`` is the global blend strength (1.0 when opaque).
    Skipped samples keep their id and seed but carry null draw fields.
    """

    sample_id: str = ""
    pipeline: str = ""
    face_id: str = ""
    occluder_ids: list[str] = field(default_factory=list)
    seed: int = 0
    alpha: float | None = None
    scale: float | None = None
    placement: tuple[int, int] | None = None
    config_hash: str = ""
    status: str = "ok"

    def to_json(self) -> str:
        d = {
            "sample_id": self.sample_id,
            "pipeline": self.pipeline,
            "face_id": self.face_id,
            "occluder_ids": list(self.occluder_ids),
            "seed": self.seed,
            "alpha": self.alpha,
            "scale": self.scale,
            "placement": None if self.placement is None else list(self.placement),
            "config_hash": self.config_hash,
            "status": self.status,
        }
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed manifest line: {exc}") from exc
        if not isinstance(d, dict):
            raise InputError("manifest line must be a JSON object")
        missing = [k for k in _FIELDS if k not in d]
        unknown = [k for k in d if k not in _FIELDS]
        if missing or unknown:
            parts = []
            if missing:
                parts.append(f"missing keys {missing}")
            if unknown:
                parts.append(f"unknown keys {unknown}")
            raise InputError("manifest line has " + " and ".join(parts))
        placement = d["placement"]
        if placement is not None:
            if not (isinstance(placement, list) and len(placement) == 2):
                raise InputError(f"placement must be [x, y] or null, got {placement!r}")
            placement = (int(placement[0]), int(placement[1]))
        if d["status"] not in ("ok", "skipped"):
            raise InputError(f"unknown status {d['status']!r}")
        return cls(
            sample_id=str(d["sample_id"]),
            pipeline=str(d["pipeline"]),
            face_id=str(d["face_id"]),
            occluder_ids=[str(x) for x in d["occluder_ids"]],
            seed=int(d["seed"]),
            alpha=None if d["alpha"] is None else float(d["alpha"]),
            scale=None if d["scale"] is None else float(d["scale"]),
            placement=placement,
            config_hash=str(d["config_hash"]),
            status=str(d["status"]),
        )


def write_manifest(records, path) -> None:
    """Write records as JSONL, one line per record, in the given order."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_manifest(path) -> list[ManifestRecord]:
    """Parse a JSONL manifest; malformed lines raise with their line number."""
    path = Path(path)
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ManifestRecord.from_json(line))
            except InputError as exc:
                raise InputError(f"{path} line {lineno}: {exc}") from exc
    return records
