class NeuralNetError(Exception):
    pass


class ShapeMismatch(NeuralNetError, ValueError):
    pass


class UnsupportedInputSize(NeuralNetError, ValueError):
    pass


class NonFiniteLoss(NeuralNetError, FloatingPointError):
    pass


class EmptyDataset(NeuralNetError, ValueError):
    pass


class EmptyTotal(NeuralNetError, ValueError):
    pass


class ModelNotTrained(NeuralNetError, RuntimeError):
    pass


class CorruptFile(NeuralNetError, ValueError):
    pass


class VersionMismatch(NeuralNetError, ValueError):
    pass
