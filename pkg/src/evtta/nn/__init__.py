"""Minimal NHWC network kernel with hand-written gradients."""

from .layers import BN, OTHER, BatchNorm, Conv2d, Dense, GaussianHead, GlobalAvgPool, MaxPool, Parameter, ReLU, SoftmaxHead
from .model import Model, ShapeError, bn_layers, build_classifier, build_regressor
from .optim import AdamState, adam_step
from .train import TrainResult, accuracy, cross_entropy, gaussian_nll, gaussian_nll_grad, rmse, train_source

__all__ = [
    "BN", "OTHER", "BatchNorm", "Conv2d", "Dense", "GaussianHead", "GlobalAvgPool", "MaxPool", "Parameter",
    "ReLU", "SoftmaxHead", "Model", "ShapeError", "bn_layers", "build_classifier", "build_regressor",
    "AdamState", "adam_step", "TrainResult", "accuracy", "cross_entropy", "gaussian_nll",
    "gaussian_nll_grad", "rmse", "train_source",
]
