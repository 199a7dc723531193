"""Notice records and the JSON manifest that persists a run."""
from __future__ import annotations

import datetime as dt
import json
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from ..fetcher import IoError
from ..imagecore import BBox
from ..neuralnet.weights import atomic_write_bytes

SCHEMA_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class NoticeRecord:
    source: str
    date: str
    page: int
    bbox: BBox
    crop_path: str
    score: float
    matched_keywords: List[str]
    common_count: int
    decided: bool = True
    extracted_at: str = ""

    def sort_key(self):
        b = self.bbox
        return (self.source, self.date, self.page, b.y, b.x, b.w, b.h)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "date": self.date,
            "page": self.page,
            "bbox": {"x": self.bbox.x, "y": self.bbox.y, "w": self.bbox.w, "h": self.bbox.h},
            "crop_path": self.crop_path,
            "score": self.score,
            "matched_keywords": list(self.matched_keywords),
            "common_count": self.common_count,
            "decided": self.decided,
            "extracted_at": self.extracted_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoticeRecord":
        b = d["bbox"]
        return cls(
            source=str(d["source"]), date=str(d["date"]), page=int(d["page"]),
            bbox=BBox(int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"])),
            crop_path=str(d["crop_path"]), score=float(d["score"]),
            matched_keywords=[str(k) for k in d["matched_keywords"]],
            common_count=int(d["common_count"]), decided=bool(d.get("decided", True)),
            extracted_at=str(d.get("extracted_at", "")),
        )


def new_run_id() -> str:
    return dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ") + "-" + uuid.uuid4().hex[:8]


def utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class Manifest:
    run_id: str = field(default_factory=new_run_id)
    created_at: str = field(default_factory=utc_now)
    config_hash: str = ""
    records: List[NoticeRecord] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION
    # pages that failed and were skipped: {"source", "date", "page", "error"}
    skipped: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "run_id": self.run_id,
            "created_at": self.created_at,
            "config_hash": self.config_hash,
            "records": [r.to_dict() for r in self.records],
            "skipped": list(self.skipped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        try:
            if int(d["schema_version"]) != SCHEMA_VERSION:
                raise ManifestError(f"unsupported schema_version {d['schema_version']}")
            return cls(
                run_id=str(d["run_id"]), created_at=str(d["created_at"]),
                config_hash=str(d["config_hash"]),
                records=[NoticeRecord.from_dict(r) for r in d["records"]],
                schema_version=int(d["schema_version"]),
                skipped=list(d.get("skipped", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"malformed manifest: {exc!r}") from exc


def manifest_to_json(manifest: Manifest) -> str:
    return json.dumps(manifest.to_dict(), indent=2, ensure_ascii=False) + "\n"


def parse_manifest(text: str) -> Manifest:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object")
    return Manifest.from_dict(data)


def export_manifest(manifest: Manifest, path) -> Path:
    """Write the manifest JSON atomically (temp file, fsync, rename)."""
    path = Path(path)
    try:
        atomic_write_bytes(path, manifest_to_json(manifest).encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}") from exc
    return path


def load_manifest(path) -> Manifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text)
