"""Joint brain-tumor segmentation and recurrence-location prediction on
dual-modality MR slices: dual encoders with dilated convolution groups,
multi-scale multi-channel attention fusion, cross-modality correlation
learning with divergence losses, and dual decoders."""

from .blocks import NetworkConfig
from .data import Case, DatasetSplit
from .losses import LossConfig
from .network import ModelVariant, RecurrenceNet, build_model
from .synthetic import SynthConfig, generate_case, generate_dataset
from .training import TrainSchedule, evaluate, pretrain, train

__version__ = "0.1.0"

__all__ = [
    "Case",
    "DatasetSplit",
    "LossConfig",
    "ModelVariant",
    "NetworkConfig",
    "RecurrenceNet",
    "SynthConfig",
    "TrainSchedule",
    "build_model",
    "evaluate",
    "generate_case",
    "generate_dataset",
    "pretrain",
    "train",
    "__version__",
]
