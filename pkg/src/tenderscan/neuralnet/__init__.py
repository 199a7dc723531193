"""From-scratch CNN engine: layers, the three classifier architectures,
training, metrics and weight files."""
from .errors import (
    CorruptFile,
    EmptyDataset,
    EmptyTotal,
    ModelNotTrained,
    NeuralNetError,
    NonFiniteLoss,
    ShapeMismatch,
    UnsupportedInputSize,
    VersionMismatch,
)
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    Activation,
    BatchNorm,
    Conv2D,
    Dense,
    DepthwiseConv2D,
    Flatten,
    GlobalAvgPool,
    MaxPool2D,
    ReLU,
    SeparableConv2D,
    Sequential,
    concat_channels,
    split_channels,
)
from .metrics import (
    NEGATIVE,
    POSITIVE,
    Metrics,
    confusion_counts,
    evaluate_model,
    images_to_tensor,
    metrics_from_confusion,
    predict_batch,
)
from .models import ARCHS, Model, build_body, build_model
from .training import (
    TrainConfig,
    TrainResult,
    read_history_csv,
    train_model,
    train_test_split,
    write_history_csv,
)
from .units import (
    InceptionModule,
    InceptionSpec,
    ResidualUnit,
    ResidualUnitSpec,
    XceptionUnit,
    XceptionUnitSpec,
    inception_apply,
    residual_unit_apply,
    xception_unit_apply,
)
from .weights import load_weights, save_weights
