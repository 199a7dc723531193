"""Classifier training as run by the ``train`` command."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from ..imagecore import prepare_crop
from ..neuralnet import (
    Metrics,
    Model,
    TrainConfig,
    build_model,
    evaluate_model,
    save_weights,
    train_model,
    train_test_split,
    write_history_csv,
)
from .config import ConfigError, PipelineConfig
from .run import load_gray
from .synthetic import make_patch_dataset

log = logging.getLogger(__name__)

IMAGE_GLOB = ("*.png", "*.jpg", "*.jpeg", "*.tif", "*.tiff", "*.bmp")


def load_labelled_dir(root, size: int, fill: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Images under ``root/positive`` (label 1) and ``root/negative`` (label 0)."""
    root = Path(root)
    xs, ys = [], []
    for label, sub in ((1, "positive"), (0, "negative")):
        files = sorted(p for pat in IMAGE_GLOB for p in (root / sub).glob(pat))
        for p in files:
            xs.append(prepare_crop(load_gray(p), size, fill) / 255.0)
            ys.append(label)
    if not xs:
        raise ConfigError(f"no images under {root}/positive or {root}/negative")
    return np.stack(xs)[:, None], np.array(ys, dtype=np.int64)


@dataclass
class TrainingOutcome:
    model: Model
    history: list
    checkpoint_metrics: Dict[int, Metrics]
    final: Optional[Metrics]
    files: Dict[str, Path]


def train_classifier(config: PipelineConfig, out_dir, arch: Optional[str] = None,
                     train_cfg: Optional[TrainConfig] = None,
                     dataset: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TrainingOutcome:
    """Train one architecture and write its weights, history and checkpoint metrics.

    Files written to ``out_dir``: ``<arch>.tndr``, ``<arch>-history.csv``,
    ``<arch>-checkpoints.json`` (checkpoint epochs plus the final one) and
    ``<arch>-epochNNN.tndr`` per checkpoint.
    """
    arch = arch or config.arch
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = train_cfg or config.train
    tc = replace(tc, checkpoint_dir=str(out))
    if dataset is None:
        if config.train_data:
            dataset = load_labelled_dir(config.train_data, config.input_size)
        else:
            dataset = make_patch_dataset(config.train_samples, config.input_size, seed=tc.seed)
    train, test = train_test_split(*dataset, test_frac=0.2, seed=tc.seed)
    model = build_model(arch, config.input_size, config.width_preset, seed=tc.seed)
    result = train_model(model, train, test, tc)
    files = {
        "weights": save_weights(model, out / f"{arch}.tndr"),
        "history": write_history_csv(result.history, out / f"{arch}-history.csv"),
    }
    final = evaluate_model(model, test) if len(test[0]) else None
    metrics = dict(result.checkpoint_metrics)
    # the final model always gets a row so reports work without checkpoint_epochs
    if final is not None:
        metrics.setdefault(tc.epochs, final)
    ckpt = {str(e): m.as_dict() for e, m in sorted(metrics.items())}
    files["checkpoints"] = out / f"{arch}-checkpoints.json"
    files["checkpoints"].write_text(json.dumps(ckpt, indent=2) + "\n")
    return TrainingOutcome(model, result.history, metrics, final, files)
