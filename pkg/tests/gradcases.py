"""Finite-difference cases shared by the layer tests and the acceptance suite."""
import numpy as np

from tenderscan.neuralnet import (
    Activation,
    BatchNorm,
    Conv2D,
    Dense,
    DepthwiseConv2D,
    Flatten,
    GlobalAvgPool,
    InceptionModule,
    InceptionSpec,
    MaxPool2D,
    ResidualUnit,
    ResidualUnitSpec,
    SeparableConv2D,
    XceptionUnit,
    XceptionUnitSpec,
)
from tenderscan.neuralnet.models import build_body


def _init(layer, seed=0):
    layer.init_params(np.random.default_rng(seed))
    # move batchnorm affine params off their trivial defaults
    rng = np.random.default_rng(seed + 100)
    for _, sub in layer.walk():
        if isinstance(sub, BatchNorm):
            sub.params["gamma"] = rng.uniform(0.5, 1.5, sub.channels)
            sub.params["beta"] = rng.normal(0, 0.1, sub.channels)
    return layer


def layer_cases():
    """(name, layer, input shape) for every layer type."""
    return [
        ("conv3x3_same", _init(Conv2D(2, 3, 3, 1, "same")), (2, 2, 5, 5)),
        ("conv3x3_stride2", _init(Conv2D(2, 3, 3, 2, "same")), (2, 2, 6, 7)),
        ("conv2x2_valid", _init(Conv2D(1, 2, 2, 1, "valid")), (2, 1, 4, 4)),
        ("conv7x7_stride2", _init(Conv2D(1, 2, 7, 2, "same", use_bias=False)), (1, 1, 9, 9)),
        ("depthwise3x3", _init(DepthwiseConv2D(3, 3, 1, "same")), (2, 3, 5, 5)),
        ("depthwise3x3_stride2", _init(DepthwiseConv2D(2, 3, 2, "same")), (2, 2, 7, 6)),
        ("separable", _init(SeparableConv2D(3, 4, 3, 1, "same")), (2, 3, 5, 5)),
        ("batchnorm4d", _init(BatchNorm(3)), (4, 3, 3, 3)),
        ("batchnorm2d", _init(BatchNorm(5)), (6, 5)),
        ("maxpool2x2", MaxPool2D(2, 2, "valid"), (2, 2, 4, 4)),
        ("maxpool3x3_same", MaxPool2D(3, 2, "same"), (2, 2, 5, 5)),
        ("gap", GlobalAvgPool(), (2, 3, 4, 5)),
        ("flatten", Flatten(), (2, 3, 2, 2)),
        ("dense", _init(Dense(6, 3)), (4, 6)),
        ("relu", Activation("relu"), (3, 7)),
        ("tanh", Activation("tanh"), (3, 7)),
        ("linear", Activation("linear"), (3, 7)),
    ]


def unit_cases():
    """(name, unit, input shape) for every composite unit variant."""
    return [
        ("residual_identity", _init(ResidualUnit(4, ResidualUnitSpec(4, 1))), (2, 4, 5, 5)),
        ("residual_projection", _init(ResidualUnit(3, ResidualUnitSpec(4, 2))), (2, 3, 6, 6)),
        ("inception", _init(InceptionModule(3, InceptionSpec(2, 2, 3, 1, 2, 2))), (2, 3, 5, 5)),
        ("xception_middle", _init(XceptionUnit(4, XceptionUnitSpec(4))), (2, 4, 5, 5)),
        ("xception_entry_exit", _init(XceptionUnit(3, XceptionUnitSpec(4, is_entry_exit=True))), (2, 3, 6, 6)),
        ("xception_entry_first", _init(XceptionUnit(3, XceptionUnitSpec(4, is_entry_exit=True, is_first=True))),
         (2, 3, 6, 6)),
    ]


def full_xception_case():
    """Tiny xception body on an 8x8 input, initialised as the model builder does.

    Batchnorm keeps its default affine params here: at 8x8 the exit flow is
    1x1, so each batchnorm normalises two values and random gamma/beta make
    the objective curved enough that the finite differences, not the
    gradients, limit the accuracy.
    """
    body = build_body("xception", 8, "tiny")
    body.init_params(np.random.default_rng(0))
    return "xception_tiny_8x8", body, (2, 1, 8, 8)
