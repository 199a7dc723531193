"""Confusion-matrix metrics, evaluation and batched prediction."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..imagecore import prepare_crop
from .errors import EmptyDataset, EmptyTotal, ModelNotTrained
from .models import Model, sigmoid, softmax

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    loss: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int, loss: float = 0.0) -> Metrics:
    if min(tp, fp, fn, tn) < 0:
        raise ValueError("confusion counts must be non-negative")
    total = tp + fp + fn + tn
    if total == 0:
        raise EmptyTotal("no samples in confusion matrix")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Metrics(
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        loss=loss,
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2 * precision * recall / s if s > 0 else 0.0


def confusion_counts(y_true: Sequence[int], y_pred: Sequence[int]) -> Tuple[int, int, int, int]:
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    tn = int(np.sum(~t & ~p))
    return tp, fp, fn, tn


def predict_labels(model: Model, x: np.ndarray, batch_size: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """Inference-mode logits and hard labels for a tensor batch.

    Sigmoid heads use a 0.5 threshold on the probability (logit > 0);
    softmax heads take the argmax with ties going to the negative class.
    """
    if not model.initialized:
        raise ModelNotTrained("model weights are uninitialised")
    logits = np.concatenate(
        [model.forward(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
    ) if len(x) else np.zeros((0, model.n_outputs))
    if model.loss == "sigmoid-bce":
        labels = (logits[:, 0] > 0).astype(np.int64)
    else:
        labels = np.argmax(logits, axis=1).astype(np.int64)
    return logits, labels


def evaluate_model(model: Model, dataset: Tuple[np.ndarray, np.ndarray], batch_size: int = 64) -> Metrics:
    x, y = dataset
    if len(x) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    logits, labels = predict_labels(model, x, batch_size)
    loss, _ = model.loss_and_grad(logits, y)
    return metrics_from_confusion(*confusion_counts(y, labels), loss=loss)


def images_to_tensor(images: Sequence[np.ndarray]) -> np.ndarray:
    """Stack equally-sized uint8 gray images into an (N, 1, H, W) tensor in [0, 1]."""
    if not images:
        return np.zeros((0, 1, 0, 0))
    return np.stack([np.asarray(im, dtype=np.float64) / 255.0 for im in images])[:, None]


def predict_batch(model: Model, images: Sequence[np.ndarray], batch_size: int = 64,
                  fill: int = 0) -> List[Tuple[str, float]]:
    """Label and notice-probability for each image, in input order.

    Images not already at the model's input size are run through
    grayscale, square padding and bilinear resizing first.
    """
    if not model.initialized:
        raise ModelNotTrained("model weights are uninitialised")
    if not images:
        return []
    size = model.input_size
    prepared = [
        im if im.shape == (size, size) and im.dtype == np.uint8 else prepare_crop(im, size, fill)
        for im in images
    ]
    x = images_to_tensor(prepared)
    logits, labels = predict_labels(model, x, batch_size)
    scores = sigmoid(logits[:, 0]) if model.loss == "sigmoid-bce" else softmax(logits)[:, 1]
    return [(POSITIVE if lab else NEGATIVE, float(s)) for lab, s in zip(labels, scores)]
