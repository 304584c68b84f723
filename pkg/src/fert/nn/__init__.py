"""From-scratch dense NN engine used by the classifier."""
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    Module,
    ReLU,
    concat_channels,
    split_channels,
)
from .loss import cross_entropy, softmax
from .network import BasicBlock, FertNet, N_CLASSES
from .optim import SGD
from .tensor import Tensor

__all__ = [
    "BasicBlock",
    "BatchNorm2d",
    "Conv2d",
    "FertNet",
    "GlobalAvgPool",
    "Linear",
    "MaxPool2x2",
    "Module",
    "N_CLASSES",
    "ReLU",
    "SGD",
    "Tensor",
    "concat_channels",
    "cross_entropy",
    "softmax",
    "split_channels",
]
