"""Layers, losses, optimizer and mixed-precision parameters."""
from .checkpoint import CheckpointError, load_model, save_model
from .layers import (AvgPool2d, BatchNorm, Conv2d, Dropout, Flatten, Layer, Linear, MaxPool2d,
                     ReLU, Sigmoid, Tanh)
from .losses import CrossEntropy, MSELoss
from .models import Model, build_cifarnet, build_lenet5
from .optim import SGD, scale_gradients
from .precision import STAGES, MixedParam, StagePrecisions

__all__ = [
    "AvgPool2d", "BatchNorm", "CheckpointError", "Conv2d", "CrossEntropy", "Dropout", "Flatten",
    "Layer", "Linear", "MSELoss", "MaxPool2d", "MixedParam", "Model", "ReLU", "SGD", "STAGES",
    "Sigmoid", "StagePrecisions", "Tanh", "build_cifarnet", "build_lenet5", "load_model",
    "save_model", "scale_gradients",
]
