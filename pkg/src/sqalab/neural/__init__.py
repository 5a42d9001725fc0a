"""From-scratch neural stack: layers with manual backprop, Adam, builders."""

from .layers import (
    Activation,
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    GlobalMaxPool,
    MaxPool2D,
    mse_loss,
)
from .model import Model, build_dnsmos, build_dnsmos_plus, build_model, predict
from .optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainResult, evaluate, predict_batched, train_model
