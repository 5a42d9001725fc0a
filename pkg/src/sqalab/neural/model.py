"""Model container and the two quality-net builders.

A model is an ordered layer list with exactly one GlobalMaxPool; the
vector coming out of that pool is the latent representation, and the
final Dense(1) output is the quality score. Builders accept a width
multiplier so the same stacks can run at reduced channel counts.
"""

from __future__ import annotations

import numpy as np

from ..dsp import SpectralFeature
from ..errors import InvalidInput
from ..seeds import stream_rng
from .layers import (
    Activation,
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    GlobalMaxPool,
    Layer,
    MaxPool2D,
)

MIN_FRAMES = 16
FINAL_BIAS_INIT = 3.0


class Model:
    """Sequential network with a latent tap after GlobalMaxPool."""

    def __init__(self, layers: list[Layer], input_kind: str, name: str,
                 dtype=np.float32, check_finite: bool = False):
        gmp = [i for i, l in enumerate(layers) if isinstance(l, GlobalMaxPool)]
        if len(gmp) != 1:
            raise InvalidInput("model needs exactly one GlobalMaxPool")
        self.gmp_index = gmp[0]
        for l in layers[self.gmp_index + 1:]:
            if not isinstance(l, (Dense, Activation, Dropout)):
                raise InvalidInput("only Dense/Activation/Dropout may follow the pool")
        last = layers[-1]
        if not (isinstance(last, Dense) and last.out_features == 1):
            raise InvalidInput("final layer must be Dense(1)")
        self.layers = layers
        self.input_kind = input_kind
        self.name = name
        self.dtype = dtype
        self.check_finite = check_finite
        dense_after = [l for l in layers[self.gmp_index + 1:] if isinstance(l, Dense)]
        self.latent_dim = dense_after[0].in_features

    def forward(self, x: np.ndarray, training: bool = False,
                return_latent: bool = False):
        h = np.asarray(x, dtype=self.dtype)
        latent = None
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, training)
            if self.check_finite and not np.all(np.isfinite(h)):
                raise InvalidInput(f"non-finite values after layer {i}")
            if i == self.gmp_index:
                latent = h
        if return_latent:
            return h, latent
        return h

    def backward(self, dout: np.ndarray) -> None:
        d = dout
        for i in range(len(self.layers) - 1, -1, -1):
            d = self.layers[i].backward(d, need_input_grad=(i > 0))
            self.layers[i].release()

    def parameters(self) -> list:
        out = []
        for i, layer in enumerate(self.layers):
            for key, arr in layer.params().items():
                out.append((f"{i}.{key}", arr))
        return out

    def gradients(self) -> list:
        out = []
        for i, layer in enumerate(self.layers):
            for key, arr in layer.grads().items():
                out.append((f"{i}.{key}", arr))
        return out

    def state_tensors(self) -> list:
        out = []
        for i, layer in enumerate(self.layers):
            for key, arr in layer.state().items():
                out.append((f"{i}.{key}", arr))
        return out

    def spec_dict(self) -> dict:
        return {
            "name": self.name,
            "input_kind": self.input_kind,
            "latent_dim": self.latent_dim,
            "layers": [l.spec() for l in self.layers],
        }


def predict(model: Model, feature: SpectralFeature) -> dict:
    """Inference on one feature; returns the score and the latent vector."""
    if feature.kind != model.input_kind:
        raise InvalidInput(
            f"model expects {model.input_kind} input, got {feature.kind}")
    if feature.values.shape[0] < MIN_FRAMES:
        raise InvalidInput(f"need at least {MIN_FRAMES} frames")
    x = feature.values[None, None, :, :]
    pred, latent = model.forward(x, training=False, return_latent=True)
    return {"mos": float(pred[0, 0]), "latent": latent[0].copy()}


_LAYER_BUILDERS = {
    "Conv2D": lambda s, rng, dt: Conv2D(s["in_ch"], s["out_ch"], s["kh"],
                                        s["kw"], s["stride"], s["padding"],
                                        rng=rng, dtype=dt),
    "BatchNorm2D": lambda s, rng, dt: BatchNorm2D(s["channels"], dtype=dt),
    "Activation": lambda s, rng, dt: Activation(s["fn"]),
    "MaxPool2D": lambda s, rng, dt: MaxPool2D(s["kh"], s["kw"], s["stride"]),
    "GlobalMaxPool": lambda s, rng, dt: GlobalMaxPool(),
    "Dense": lambda s, rng, dt: Dense(s["in_features"], s["out_features"],
                                      rng=rng, dtype=dt),
    "Dropout": lambda s, rng, dt: Dropout(s["p"]),
}


def build_model(spec: dict, seed: int = 0, dtype=np.float32) -> Model:
    """Reconstruct a model from its descriptor (fresh random weights)."""
    rng = stream_rng(seed, "init", spec.get("name", "model"))
    layers = []
    for lspec in spec["layers"]:
        kind = lspec.get("kind")
        if kind not in _LAYER_BUILDERS:
            raise InvalidInput(f"unknown layer kind {kind!r}")
        layers.append(_LAYER_BUILDERS[kind](lspec, rng, dtype))
    model = Model(layers, spec["input_kind"], spec.get("name", "model"), dtype)
    model.layers[-1].bias[:] = FINAL_BIAS_INIT
    return model


def _scaled(base: int, width_scale: float) -> int:
    return max(1, int(round(base * width_scale)))


def build_dnsmos(width_scale: float = 1.0, seed: int = 0,
                 dtype=np.float32) -> Model:
    """Log-mel quality net: 4 ReLU convs, three 2x2 pools, 3-layer head."""
    c32, c64 = _scaled(32, width_scale), _scaled(64, width_scale)
    h = _scaled(64, width_scale)
    spec = {
        "name": "dnsmos", "input_kind": "LogMel", "latent_dim": c64,
        "layers": [
            {"kind": "Conv2D", "in_ch": 1, "out_ch": c32, "kh": 3, "kw": 3,
             "stride": 1, "padding": "same"},
            {"kind": "Activation", "fn": "ReLU"},
            {"kind": "MaxPool2D", "kh": 2, "kw": 2, "stride": 2},
            {"kind": "Conv2D", "in_ch": c32, "out_ch": c32, "kh": 3, "kw": 3,
             "stride": 1, "padding": "same"},
            {"kind": "Activation", "fn": "ReLU"},
            {"kind": "MaxPool2D", "kh": 2, "kw": 2, "stride": 2},
            {"kind": "Conv2D", "in_ch": c32, "out_ch": c32, "kh": 3, "kw": 3,
             "stride": 1, "padding": "same"},
            {"kind": "Activation", "fn": "ReLU"},
            {"kind": "MaxPool2D", "kh": 2, "kw": 2, "stride": 2},
            {"kind": "Conv2D", "in_ch": c32, "out_ch": c64, "kh": 3, "kw": 3,
             "stride": 1, "padding": "same"},
            {"kind": "Activation", "fn": "ReLU"},
            {"kind": "GlobalMaxPool"},
            {"kind": "Dense", "in_features": c64, "out_features": h},
            {"kind": "Activation", "fn": "ReLU"},
            {"kind": "Dropout", "p": 0.2},
            {"kind": "Dense", "in_features": h, "out_features": h},
            {"kind": "Activation", "fn": "ReLU"},
            {"kind": "Dense", "in_features": h, "out_features": 1},
        ],
    }
    return build_model(spec, seed=seed, dtype=dtype)


def build_dnsmos_plus(width_scale: float = 1.0, seed: int = 0,
                      dtype=np.float32) -> Model:
    """Log-STFT quality net: 5 SiLU+BN convs, two 3x3/2 pools, 2-layer head."""
    c32, c64 = _scaled(32, width_scale), _scaled(64, width_scale)
    c128, h = _scaled(128, width_scale), _scaled(64, width_scale)

    def conv_block(cin, cout):
        return [
            {"kind": "Conv2D", "in_ch": cin, "out_ch": cout, "kh": 3, "kw": 3,
             "stride": 1, "padding": "same"},
            {"kind": "BatchNorm2D", "channels": cout},
            {"kind": "Activation", "fn": "SiLU"},
        ]

    layers = (conv_block(1, c32) + conv_block(c32, c32)
              + [{"kind": "MaxPool2D", "kh": 3, "kw": 3, "stride": 2}]
              + conv_block(c32, c64) + conv_block(c64, c64)
              + [{"kind": "MaxPool2D", "kh": 3, "kw": 3, "stride": 2}]
              + conv_block(c64, c128)
              + [{"kind": "GlobalMaxPool"},
                 {"kind": "Dense", "in_features": c128, "out_features": h},
                 {"kind": "Activation", "fn": "SiLU"},
                 {"kind": "Dense", "in_features": h, "out_features": 1}])
    spec = {"name": "dnsmos_plus", "input_kind": "LogSTFT",
            "latent_dim": c128, "layers": layers}
    return build_model(spec, seed=seed, dtype=dtype)


BUILDERS = {"dnsmos": build_dnsmos, "dnsmos_plus": build_dnsmos_plus}
