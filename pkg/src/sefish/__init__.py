"""sefish: a channels-last autodiff micro-framework plus a squeeze-excitation
CNN image classifier with a two-phase transfer-learning workflow."""

from .data import AugmentConfig, Dataset, SplitManifest, augment, batches, ingest, resize, split
from .errors import (
    CompatibilityError,
    DataError,
    DimensionError,
    IngestError,
    NumericalError,
    SefishError,
    SpecError,
    SplitError,
    TrainingError,
    WeightsFormatError,
)
from .layers import LayerSpec, ParameterStore, SqueezeExcitation, init_layer
from .metrics import ConfusionMatrix, evaluate
from .model import (
    ModelInstance,
    ModelSpec,
    build_model,
    flatten_width,
    load_model,
    load_weights,
    replace_classifier,
    save_weights,
    shape_chain,
)
from .optim import Adam, loss_and_grad
from .tensor import GradTape, Tensor
from .train import EpochReport, RunResult, TrainConfig, posttrain, pretrain, repeat_runs

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AugmentConfig",
    "CompatibilityError",
    "ConfusionMatrix",
    "DataError",
    "Dataset",
    "DimensionError",
    "EpochReport",
    "GradTape",
    "IngestError",
    "LayerSpec",
    "ModelInstance",
    "ModelSpec",
    "NumericalError",
    "ParameterStore",
    "RunResult",
    "SefishError",
    "SpecError",
    "SplitError",
    "SplitManifest",
    "SqueezeExcitation",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "WeightsFormatError",
    "augment",
    "batches",
    "build_model",
    "evaluate",
    "flatten_width",
    "ingest",
    "init_layer",
    "load_model",
    "load_weights",
    "loss_and_grad",
    "posttrain",
    "pretrain",
    "repeat_runs",
    "replace_classifier",
    "resize",
    "save_weights",
    "shape_chain",
    "split",
]
