"""ResNet-, GoogLeNet- and Xception-style binary classifiers."""
from __future__ import annotations

from typing import Iterator, List, Optional, Tuple

import numpy as np

from .errors import ModelNotTrained, ShapeMismatch, UnsupportedInputSize
from .layers import (
    Activation,
    BatchNorm,
    Conv2D,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2D,
    ReLU,
    SeparableConv2D,
    Sequential,
)
from .units import (
    InceptionModule,
    InceptionSpec,
    ResidualUnit,
    ResidualUnitSpec,
    XceptionUnit,
    XceptionUnitSpec,
)

ARCHS = ("resnet", "googlenet", "xception")
INPUT_SIZES = (224, 112, 64)
PRESETS = ("full", "tiny")

RESNET_UNITS = [(64, 1), (128, 2), (256, 2), (512, 2)]

# GoogLeNet 3a, 4a, 4b, 4c and 5a widths
GOOGLENET_MODULES = [
    (64, 96, 128, 16, 32, 32),
    (192, 96, 208, 16, 48, 64),
    (160, 112, 224, 24, 64, 64),
    (128, 128, 256, 24, 64, 64),
    (256, 160, 320, 32, 128, 128),
]

XCEPTION_STEM = 32
XCEPTION_ENTRY = 64
XCEPTION_MIDDLE = 64
XCEPTION_EXIT = 128
XCEPTION_TAIL = 64

HEAD_WIDTHS = (32, 2)


def scale_filters(n: int, preset: str) -> int:
    if preset == "full":
        return n
    if preset == "tiny":
        return max(4, n // 8)
    raise ValueError(f"unknown width preset {preset!r}; choose from {PRESETS}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class Model:
    """A network body plus its output head convention and loss."""

    def __init__(self, arch: str, input_size: int, width_preset: str, body: Sequential, loss: str):
        self.arch = arch
        self.input_size = input_size
        self.width_preset = width_preset
        self.body = body
        self.loss = loss
        self.initialized = False
        self.trained = False

    def __repr__(self):
        return (f"Model(arch={self.arch!r}, input_size={self.input_size}, "
                f"width_preset={self.width_preset!r}, params={self.num_parameters()})")

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (1, self.input_size, self.input_size)

    @property
    def n_outputs(self) -> int:
        return 1 if self.loss == "sigmoid-bce" else 2

    def init_params(self, seed: int = 0) -> "Model":
        self.body.init_params(np.random.default_rng(seed))
        self.initialized = True
        return self

    def named_parameters(self) -> Iterator[Tuple[str, Layer, str]]:
        return self.body.named_parameters()

    def named_buffers(self) -> Iterator[Tuple[str, Layer, str]]:
        return self.body.named_buffers()

    def state(self) -> List[Tuple[str, np.ndarray]]:
        """Every parameter and buffer, in a stable order."""
        items = [(n, layer.params[k]) for n, layer, k in self.named_parameters()]
        items += [(n, layer.buffers[k]) for n, layer, k in self.named_buffers()]
        return items

    def num_parameters(self) -> int:
        return sum(layer.params[k].size for _, layer, k in self.named_parameters())

    def shape_chain(self, in_shape: Optional[Tuple[int, ...]] = None) -> List[Tuple[str, Tuple[int, ...]]]:
        """Walk the top-level layers and record each output shape (batch omitted)."""
        shape = in_shape or self.input_shape
        chain = [("input", shape)]
        for name, layer in self.body.sublayers():
            shape = layer.output_shape(shape)
            chain.append((name, shape))
        if shape != (self.n_outputs,):
            raise ShapeMismatch(f"{self.arch} head ends in {shape}, expected ({self.n_outputs},)")
        return chain

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Logits of shape (N, 1) or (N, 2)."""
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"model expects (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        return self.body.forward(x, train)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        return self.body.backward(dlogits)

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        """Head activation applied to inference-mode logits."""
        if not self.initialized:
            raise ModelNotTrained("model weights are uninitialised")
        z = self.forward(x, train=False)
        return sigmoid(z) if self.loss == "sigmoid-bce" else softmax(z)

    def positive_scores(self, x: np.ndarray) -> np.ndarray:
        p = self.probabilities(x)
        return p[:, 0] if self.loss == "sigmoid-bce" else p[:, 1]

    def loss_and_grad(self, logits: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        return loss_and_grad(self.loss, logits, y)


def loss_and_grad(kind: str, logits: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    y = np.asarray(y)
    n = logits.shape[0]
    if kind == "sigmoid-bce":
        z = logits[:, 0]
        t = y.astype(np.float64)
        loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
        grad = ((sigmoid(z) - t) / n)[:, None]
        return float(loss.mean()), grad
    if kind == "softmax-ce":
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1))
        idx = y.astype(np.int64)
        loss = logsum - shifted[np.arange(n), idx]
        grad = softmax(logits)
        grad[np.arange(n), idx] -= 1.0
        return float(loss.mean()), grad / n
    raise ValueError(f"unknown loss {kind!r}")


def _stem(preset: str) -> Tuple[List[Layer], List[str], int]:
    c = scale_filters(64, preset)
    layers = [Conv2D(1, c, 7, 2, "same", use_bias=False), BatchNorm(c), ReLU(), MaxPool2D(3, 2, "same")]
    return layers, ["stem_conv", "stem_bn", "stem_act", "stem_pool"], c


def _dense_head(in_features: int) -> Tuple[List[Layer], List[str]]:
    a, b = HEAD_WIDTHS
    layers = [Dense(in_features, a), ReLU(), Dense(a, b), ReLU(), Dense(b, 1)]
    return layers, ["fc1", "fc1_act", "fc2", "fc2_act", "fc_out"]


def _resnet(preset: str) -> Sequential:
    layers, names, c = _stem(preset)
    for i, (f, s) in enumerate(RESNET_UNITS, start=1):
        f = scale_filters(f, preset)
        layers.append(ResidualUnit(c, ResidualUnitSpec(f, s)))
        names.append(f"res{i}")
        c = f
    layers.append(GlobalAvgPool())
    names.append("gap")
    head, head_names = _dense_head(c)
    return Sequential(layers + head, names + head_names)


def _googlenet(preset: str) -> Sequential:
    layers, names, c = _stem(preset)
    specs = [InceptionSpec(*(scale_filters(n, preset) for n in widths)) for widths in GOOGLENET_MODULES]
    plan = ["inc", "pool", "inc", "inc", "inc", "pool", "inc"]
    it = iter(specs)
    n_inc = n_pool = 0
    for step in plan:
        if step == "inc":
            spec = next(it)
            n_inc += 1
            layers.append(InceptionModule(c, spec))
            names.append(f"inception{n_inc}")
            c = spec.out_channels
        else:
            n_pool += 1
            layers.append(MaxPool2D(3, 2, "same"))
            names.append(f"pool{n_pool}")
    layers.append(GlobalAvgPool())
    names.append("gap")
    head, head_names = _dense_head(c)
    return Sequential(layers + head, names + head_names)


def _xception(preset: str, input_size: int) -> Sequential:
    stem = scale_filters(XCEPTION_STEM, preset)
    entry = scale_filters(XCEPTION_ENTRY, preset)
    middle = scale_filters(XCEPTION_MIDDLE, preset)
    exit_ = scale_filters(XCEPTION_EXIT, preset)
    tail = scale_filters(XCEPTION_TAIL, preset)
    if middle != entry:
        raise ValueError("middle flow width must match the entry unit")
    layers = [
        SeparableConv2D(1, stem, 3, 2, "same", use_bias=False),
        BatchNorm(stem),
        ReLU(),
        XceptionUnit(stem, XceptionUnitSpec(entry, is_entry_exit=True, is_first=True)),
    ]
    names = ["stem_sepconv", "stem_bn", "stem_act", "entry"]
    for i in range(1, 4):
        layers.append(XceptionUnit(middle, XceptionUnitSpec(middle)))
        names.append(f"middle{i}")
    layers += [
        XceptionUnit(middle, XceptionUnitSpec(exit_, is_entry_exit=True)),
        SeparableConv2D(exit_, tail, 3, 1, "same", use_bias=False),
        BatchNorm(tail),
        ReLU(),
        Flatten(),
    ]
    names += ["exit", "tail_sepconv", "tail_bn", "tail_act", "flatten"]
    side = input_size
    for _ in range(3):  # stem, entry and exit each halve the grid
        side = -(-side // 2)
    layers.append(Dense(tail * side * side, 2))
    names.append("fc_out")
    return Sequential(layers, names)


LOSSES = {"resnet": "sigmoid-bce", "googlenet": "sigmoid-bce", "xception": "softmax-ce"}


def build_body(arch: str, input_size: int, width_preset: str = "full") -> Sequential:
    """Layer stack for ``arch`` at any square input size (no size whitelist)."""
    if arch == "resnet":
        return _resnet(width_preset)
    if arch == "googlenet":
        return _googlenet(width_preset)
    if arch == "xception":
        return _xception(width_preset, input_size)
    raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHS}")


def build_model(arch: str, input_size: int = 224, width_preset: str = "full",
                seed: Optional[int] = 0) -> Model:
    """Build one of the three classifiers for square grayscale input.

    ``seed=None`` leaves the weights uninitialised (prediction then raises
    :class:`ModelNotTrained` until weights are loaded).
    """
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHS}")
    if input_size not in INPUT_SIZES:
        raise UnsupportedInputSize(f"input size {input_size} not in {INPUT_SIZES}")
    if width_preset not in PRESETS:
        raise ValueError(f"unknown width preset {width_preset!r}; choose from {PRESETS}")

    model = Model(arch, input_size, width_preset, build_body(arch, input_size, width_preset), LOSSES[arch])
    model.shape_chain()
    if seed is not None:
        model.init_params(seed)
    return model
