"""Pipeline configuration read from a TOML file.

Every setting is a top-level key; sources are an array of tables::

    dpi = 150
    arch = "xception"
    input_size = 64
    width_preset = "tiny"
    weights = "models/xception.tndr"
    keywords = "keywords.txt"
    min_common = 3
    min_conf = 40
    ocr_command = "tesseract {input} stdout tsv"
    rasterizer_command = "pdftoppm -r {dpi} -png {input} {outdir}/page"
    manifest = "out/manifest.json"
    work_dir = "work"

    [[sources]]
    name = "gorkhapatra"
    index_url = "https://example.org/epaper"

Relative paths are taken relative to the config file's directory.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..fetcher import DEFAULT_DPI, DEFAULT_RASTERIZER, SourceConfig
from ..neuralnet.models import ARCHS, PRESETS
from ..neuralnet.training import TrainConfig
from ..ocrfilter import DEFAULT_MIN_COMMON, DEFAULT_MIN_CONF
from ..segmenter import SegmentationParams

DEFAULT_OCR = "tesseract {input} stdout tsv"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    sources: List[SourceConfig] = field(default_factory=list)
    dpi: int = DEFAULT_DPI
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    arch: str = "xception"
    input_size: int = 64
    width_preset: str = "tiny"
    weights: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    train_samples: int = 400
    # directory with positive/ and negative/ image folders; synthetic patches when unset
    train_data: Optional[str] = None
    ocr_command: str = DEFAULT_OCR
    min_conf: float = DEFAULT_MIN_CONF
    keywords: Optional[str] = None
    min_common: int = DEFAULT_MIN_COMMON
    rasterizer_command: str = DEFAULT_RASTERIZER
    manifest: str = "manifest.json"
    work_dir: str = "work"
    port: int = 8080
    workers: int = 2
    debug_rejects: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.width_preset not in PRESETS:
            raise ConfigError(f"width_preset must be one of {PRESETS}")
        if self.dpi < 1:
            raise ConfigError("dpi must be positive")
        if self.min_common < 1:
            raise ConfigError("min_common must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 < self.port < 65536:
            raise ConfigError("port out of range")

    def snapshot(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def check_paths(self, need_weights: bool = True) -> None:
        """Fail early when files the run depends on are missing."""
        if self.keywords is None or not Path(self.keywords).is_file():
            raise ConfigError(f"keyword file not found: {self.keywords}")
        if need_weights and (self.weights is None or not Path(self.weights).is_file()):
            raise ConfigError(f"weights file not found: {self.weights}")


_SEG_KEYS = {
    "seg_min_w": "min_w", "seg_min_h": "min_h", "seg_max_frac": "max_frac",
    "seg_threshold": "threshold", "seg_invert": "invert", "seg_rect_tol": "rect_tol",
    "seg_connectivity": "connectivity",
}
_TRAIN_KEYS = {
    "epochs": "epochs", "batch_size": "batch_size", "learning_rate": "learning_rate",
    "optimizer": "optimizer", "seed": "seed", "checkpoint_epochs": "checkpoint_epochs",
    "checkpoint_dir": "checkpoint_dir", "momentum": "momentum",
}
_PATH_KEYS = ("weights", "keywords", "manifest", "work_dir", "train_data")
_SOURCE_FIELDS = {f.name for f in dataclasses.fields(SourceConfig)}
_TOP_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)} - {"sources", "segmentation", "train"}


def config_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> PipelineConfig:
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def resolve(p):
        return str((base / p).resolve()) if p is not None else None

    data = dict(data)
    unknown = set(data) - _TOP_FIELDS - set(_SEG_KEYS) - set(_TRAIN_KEYS) - {"sources"}
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    try:
        sources = []
        for i, raw in enumerate(data.pop("sources", [])):
            extra = set(raw) - _SOURCE_FIELDS
            if extra:
                raise ConfigError(f"sources[{i}]: unknown key(s) {sorted(extra)}")
            raw = dict(raw)
            if "download_dir" in raw:
                raw["download_dir"] = resolve(raw["download_dir"])
            else:
                raw["download_dir"] = resolve("downloads")
            sources.append(SourceConfig(**raw))
        seg = SegmentationParams(**{_SEG_KEYS[k]: data.pop(k) for k in list(data) if k in _SEG_KEYS})
        train_kw = {_TRAIN_KEYS[k]: data.pop(k) for k in list(data) if k in _TRAIN_KEYS}
        if "checkpoint_dir" in train_kw:
            train_kw["checkpoint_dir"] = resolve(train_kw["checkpoint_dir"])
        if "checkpoint_epochs" in train_kw:
            train_kw["checkpoint_epochs"] = tuple(train_kw["checkpoint_epochs"])
        train = TrainConfig(**train_kw)
        for key in _PATH_KEYS:
            if key in data:
                data[key] = resolve(data[key])
        if "manifest" not in data:
            data["manifest"] = resolve("manifest.json")
        if "work_dir" not in data:
            data["work_dir"] = resolve("work")
        return PipelineConfig(sources=sources, segmentation=seg, train=train, **data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)
