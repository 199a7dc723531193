"""Composite blocks: residual unit, inception module, xception unit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .layers import (
    Activation,
    BatchNorm,
    Conv2D,
    Layer,
    MaxPool2D,
    ReLU,
    SeparableConv2D,
    Sequential,
    concat_channels,
    split_channels,
)


@dataclass(frozen=True)
class ResidualUnitSpec:
    filters: int
    stride: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.filters < 1:
            raise ValueError("filters must be >= 1")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")


@dataclass(frozen=True)
class InceptionSpec:
    b1: int
    b3r: int
    b3: int
    b5r: int
    b5: int
    pool_proj: int

    def __post_init__(self):
        if min(self.b1, self.b3r, self.b3, self.b5r, self.b5, self.pool_proj) < 1:
            raise ValueError("all inception branch widths must be >= 1")

    @property
    def out_channels(self) -> int:
        return self.b1 + self.b3 + self.b5 + self.pool_proj


@dataclass(frozen=True)
class XceptionUnitSpec:
    filters: int
    is_entry_exit: bool = False
    is_first: bool = False

    def __post_init__(self):
        if self.filters < 1:
            raise ValueError("filters must be >= 1")


def conv_bn(cin, filters, kernel, stride=1, activation=None):
    # conv bias is redundant in front of batchnorm
    layers = [Conv2D(cin, filters, kernel, stride, "same", use_bias=False), BatchNorm(filters)]
    names = ["conv", "bn"]
    if activation:
        layers.append(Activation(activation))
        names.append("act")
    return Sequential(layers, names)


class ResidualUnit(Layer):
    """conv3x3/s -> BN -> act -> conv3x3 -> BN, added to the skip path, then act."""

    def __init__(self, in_channels: int, spec: ResidualUnitSpec):
        super().__init__()
        f, s = spec.filters, spec.stride
        self.spec = spec
        self.in_channels = in_channels
        self.main = Sequential(
            [
                Conv2D(in_channels, f, 3, s, "same", use_bias=False),
                BatchNorm(f),
                Activation(spec.activation),
                Conv2D(f, f, 3, 1, "same", use_bias=False),
                BatchNorm(f),
            ],
            ["conv1", "bn1", "act1", "conv2", "bn2"],
        )
        self.skip = None
        if s != 1 or in_channels != f:
            self.skip = conv_bn(in_channels, f, 1, s)
        self.out_act = Activation(spec.activation)

    def sublayers(self):
        subs = [("main", self.main)]
        if self.skip is not None:
            subs.append(("skip", self.skip))
        return subs + [("out", self.out_act)]

    def init_params(self, rng):
        self.main.init_params(rng)
        if self.skip is not None:
            self.skip.init_params(rng)

    def output_shape(self, in_shape):
        if in_shape[0] != self.in_channels:
            raise ShapeMismatch(f"residual unit expects {self.in_channels} channels, got {in_shape[0]}")
        return self.main.output_shape(in_shape)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"residual unit expects {self.in_channels} channels, got {x.shape}")
        shortcut = x if self.skip is None else self.skip.forward(x, train)
        return self.out_act.forward(self.main.forward(x, train) + shortcut, train)

    def backward(self, dout):
        d = self.out_act.backward(dout)
        dx = self.main.backward(d)
        if self.skip is None:
            return dx + d
        return dx + self.skip.backward(d)


class InceptionModule(Layer):
    """Four parallel branches concatenated along channels; spatial size kept."""

    def __init__(self, in_channels: int, spec: InceptionSpec):
        super().__init__()
        self.spec = spec
        self.in_channels = in_channels
        c = in_channels
        self.branches = [
            conv_bn(c, spec.b1, 1, activation="relu"),
            Sequential([conv_bn(c, spec.b3r, 1, activation="relu"),
                        conv_bn(spec.b3r, spec.b3, 3, activation="relu")], ["reduce", "conv"]),
            Sequential([conv_bn(c, spec.b5r, 1, activation="relu"),
                        conv_bn(spec.b5r, spec.b5, 5, activation="relu")], ["reduce", "conv"]),
            Sequential([MaxPool2D(3, 1, "same"), conv_bn(c, spec.pool_proj, 1, activation="relu")],
                       ["pool", "proj"]),
        ]
        self.sizes = [spec.b1, spec.b3, spec.b5, spec.pool_proj]

    def sublayers(self):
        return list(zip(["branch1", "branch3", "branch5", "branch_pool"], self.branches))

    def init_params(self, rng):
        for b in self.branches:
            b.init_params(rng)

    def output_shape(self, in_shape):
        if in_shape[0] != self.in_channels:
            raise ShapeMismatch(f"inception expects {self.in_channels} channels, got {in_shape[0]}")
        shapes = [b.output_shape(in_shape) for b in self.branches]
        return (sum(s[0] for s in shapes),) + shapes[0][1:]

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"inception expects {self.in_channels} channels, got {x.shape}")
        return concat_channels([b.forward(x, train) for b in self.branches])

    def backward(self, dout):
        parts = split_channels(dout, self.sizes)
        dx = None
        for branch, g in zip(self.branches, parts):
            d = branch.backward(g)
            dx = d if dx is None else dx + d
        return dx


class XceptionUnit(Layer):
    """Separable-conv unit with entry/exit and first-unit variants.

    Base path is two ``act -> sepconv3x3 -> BN`` blocks with an identity
    skip. Entry/exit units end in a 3x3 stride-2 max pool and take a strided
    1x1 conv + BN skip; the first entry unit keeps only the second block.
    """

    def __init__(self, in_channels: int, spec: XceptionUnitSpec):
        super().__init__()
        self.spec = spec
        self.in_channels = in_channels
        f = spec.filters

        def block(cin):
            return Sequential(
                [ReLU(), SeparableConv2D(cin, f, 3, 1, "same", use_bias=False), BatchNorm(f)],
                ["act", "sepconv", "bn"],
            )

        layers, names = [], []
        if spec.is_entry_exit and spec.is_first:
            layers.append(block(in_channels))
            names.append("block2")
        else:
            layers += [block(in_channels), block(f)]
            names += ["block1", "block2"]
        if spec.is_entry_exit:
            layers.append(MaxPool2D(3, 2, "same"))
            names.append("pool")
            self.skip = conv_bn(in_channels, f, 1, 2)
        else:
            if in_channels != f:
                raise ShapeMismatch(
                    f"middle xception unit needs matching channels, got {in_channels} -> {f}"
                )
            self.skip = None
        self.path = Sequential(layers, names)

    def sublayers(self):
        subs = [("path", self.path)]
        if self.skip is not None:
            subs.append(("skip", self.skip))
        return subs

    def init_params(self, rng):
        self.path.init_params(rng)
        if self.skip is not None:
            self.skip.init_params(rng)

    def output_shape(self, in_shape):
        if in_shape[0] != self.in_channels:
            raise ShapeMismatch(f"xception unit expects {self.in_channels} channels, got {in_shape[0]}")
        return self.path.output_shape(in_shape)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"xception unit expects {self.in_channels} channels, got {x.shape}")
        shortcut = x if self.skip is None else self.skip.forward(x, train)
        return self.path.forward(x, train) + shortcut

    def backward(self, dout):
        dx = self.path.backward(dout)
        if self.skip is None:
            return dx + dout
        return dx + self.skip.backward(dout)


def residual_unit_apply(x: np.ndarray, unit: ResidualUnit, train: bool = False) -> np.ndarray:
    return unit.forward(x, train)


def inception_apply(x: np.ndarray, module: InceptionModule, train: bool = False) -> np.ndarray:
    return module.forward(x, train)


def xception_unit_apply(x: np.ndarray, unit: XceptionUnit, train: bool = False) -> np.ndarray:
    return unit.forward(x, train)
