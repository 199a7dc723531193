"""Mini-batch training loop, optimizers and training-history CSV files."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyDataset, NonFiniteLoss
from .layers import to_f32_grid
from .metrics import Metrics, evaluate_model
from .models import Model
from .weights import save_weights

log = logging.getLogger(__name__)

Dataset = Tuple[np.ndarray, np.ndarray]

HISTORY_FIELDS = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    checkpoint_epochs: Sequence[int] = ()
    checkpoint_dir: Optional[str] = None
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, named):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1 - b1 ** self.t
        corr2 = 1 - b2 ** self.t
        for name, layer, key in named:
            g = layer.grads[key]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p = layer.params[key]
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            to_f32_grid(p)


class SGD:
    def __init__(self, lr=1e-2, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, named):
        for name, layer, key in named:
            g = layer.grads[key]
            vel = self.velocity.setdefault(name, np.zeros_like(g))
            vel *= self.momentum
            vel -= self.lr * g
            p = layer.params[key]
            p += vel
            to_f32_grid(p)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return SGD(config.learning_rate, config.momentum)


@dataclass
class TrainResult:
    history: List[dict]
    checkpoints: Dict[int, Path] = field(default_factory=dict)
    checkpoint_metrics: Dict[int, Metrics] = field(default_factory=dict)


def train_test_split(x: np.ndarray, y: np.ndarray, test_frac: float = 0.2, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Stratified, seeded split; each class contributes ``round(test_frac * n_c)`` test samples."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        test_idx.extend(idx[: int(round(test_frac * len(idx)))].tolist())
    mask = np.zeros(len(y), dtype=bool)
    mask[test_idx] = True
    return (x[~mask], y[~mask]), (x[mask], y[mask])


def train_model(
    model: Model,
    train: Dataset,
    test: Optional[Dataset],
    config: TrainConfig,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Fit ``model`` in place and return the per-epoch history.

    Batches are drawn from a seeded permutation each epoch; indices inside a
    batch are sorted so the reduction order depends only on batch membership.
    Training loss/accuracy are batch-weighted means of training-mode forward
    passes; test columns come from an inference-mode evaluation.
    """
    x, y = train
    if len(x) == 0:
        raise EmptyDataset("training set is empty")
    if not model.initialized:
        model.init_params(config.seed)
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config)
    named = list(model.named_parameters())
    ckpt_epochs = sorted(set(int(e) for e in config.checkpoint_epochs))
    result = TrainResult(history=[])
    n = len(x)

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = np.sort(perm[start:start + config.batch_size])
            xb, yb = x[idx], y[idx]
            logits = model.forward(xb, train=True)
            loss, dlogits = model.loss_and_grad(logits, yb)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, batch starting {start}")
            model.backward(dlogits)
            opt.step(named)
            total_loss += loss * len(idx)
            if model.loss == "sigmoid-bce":
                pred = (logits[:, 0] > 0).astype(np.int64)
            else:
                pred = np.argmax(logits, axis=1)
            correct += int(np.sum(pred == yb))
        model.trained = True

        row = {"epoch": epoch, "train_loss": total_loss / n, "train_acc": correct / n,
               "test_loss": float("nan"), "test_acc": float("nan")}
        test_metrics = None
        if test is not None and len(test[0]):
            test_metrics = evaluate_model(model, test)
            row["test_loss"] = test_metrics.loss
            row["test_acc"] = test_metrics.accuracy
        result.history.append(row)
        log.info("epoch %d: loss %.4f acc %.4f test_loss %.4f test_acc %.4f", epoch,
                 row["train_loss"], row["train_acc"], row["test_loss"], row["test_acc"])
        if on_epoch is not None:
            on_epoch(row)

        if epoch in ckpt_epochs:
            if test_metrics is not None:
                result.checkpoint_metrics[epoch] = test_metrics
            if config.checkpoint_dir:
                path = Path(config.checkpoint_dir) / f"{model.arch}-epoch{epoch:03d}.tndr"
                save_weights(model, path)
                result.checkpoints[epoch] = path
    return result


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def write_history_csv(history: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([_fmt(row[k]) for k in HISTORY_FIELDS])
    return path


def read_history_csv(path) -> List[dict]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"epoch": int(rec["epoch"])}
            for k in HISTORY_FIELDS[1:]:
                row[k] = float(rec[k]) if rec[k] != "" else float("nan")
            rows.append(row)
    return rows
