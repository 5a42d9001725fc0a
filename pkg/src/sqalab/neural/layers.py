"""Network layers with hand-written forward and backward passes.

Everything operates on NCHW float arrays (NC for the dense head).
Convolution runs sample by sample as one gemm against an im2col
matrix whose rows are contiguous runs of the flattened padded plane
(each kernel tap is a shifted copy of the same flat buffer), so the
scratch stays a small multiple of one sample's activation instead of
the batch's. Reductions accumulate in 64-bit regardless of the
parameter dtype.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInput


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base: stateless by default, caches what backward needs."""

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray, need_input_grad: bool = True):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def state(self) -> dict:
        """Non-trainable tensors that belong in a checkpoint."""
        return {}

    def release(self) -> None:
        """Drop cached activations after backward."""


class Conv2D(Layer):
    """3x3-style convolution, stride 1, zero 'same' padding."""

    def __init__(self, in_ch: int, out_ch: int, kh: int = 3, kw: int = 3,
                 stride: int = 1, padding: str = "same",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if stride != 1 or padding != "same":
            raise InvalidInput("conv supports stride 1 with same padding")
        if kh % 2 == 0 or kw % 2 == 0:
            raise InvalidInput("conv kernel sides must be odd")
        self.in_ch, self.out_ch, self.kh, self.kw = in_ch, out_ch, kh, kw
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _fan_in_uniform(rng, (out_ch, in_ch, kh, kw),
                                      in_ch * kh * kw, dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.dweight, "bias": self.dbias}

    def _geometry(self, h, w):
        """Flat-plane constants. base is the flat index of the first
        interior position; every kernel tap's source for the interior
        span [base+o, base+o+lq) stays inside [0, hp*wp)."""
        hp, wp = h + self.kh - 1, w + self.kw - 1
        base = (self.kh // 2) * wp + self.kw // 2
        lq = (h - 1) * wp + w
        offs = [(di - self.kh // 2) * wp + (dj - self.kw // 2)
                for di in range(self.kh) for dj in range(self.kw)]
        return hp, wp, base, lq, offs

    @staticmethod
    def _plane_view(flat, c, h, w, wp):
        """(c, h, w) view into a (c, >=lq) flat buffer at row stride wp."""
        s0, s1 = flat.strides
        return np.lib.stride_tricks.as_strided(
            flat, shape=(c, h, w), strides=(s0, wp * s1, s1))

    def _fill_col(self, col, flat, channels, base, lq, offs, flip=False):
        kk = self.kh * self.kw
        for ci in range(channels):
            row = ci * kk
            for t, o in enumerate(offs):
                src = base - o if flip else base + o
                col[row + t] = flat[ci, src:src + lq]

    def forward(self, x, training):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise InvalidInput(
                f"conv expects [N,{self.in_ch},H,W], got {x.shape}")
        self._x = x
        n, c, h, w = x.shape
        hp, wp, base, lq, offs = self._geometry(h, w)
        k = self.in_ch * self.kh * self.kw
        w2 = self.weight.reshape(self.out_ch, k)
        xf = np.zeros((c, hp * wp), dtype=x.dtype)
        col = np.empty((k, lq), dtype=x.dtype)
        of = np.empty((self.out_ch, lq), dtype=x.dtype)
        out = np.empty((n, self.out_ch, h, w), dtype=x.dtype)
        x_int = self._plane_view(xf[:, base:], c, h, w, wp)
        o_view = self._plane_view(of, self.out_ch, h, w, wp)
        for i in range(n):
            x_int[:] = x[i]
            self._fill_col(col, xf, c, base, lq, offs)
            np.matmul(w2, col, out=of)
            out[i] = o_view
        out += self.bias[None, :, None, None]
        return out

    def backward(self, dout, need_input_grad=True):
        x = self._x
        n, c, h, w = x.shape
        hp, wp, base, lq, offs = self._geometry(h, w)
        k = self.in_ch * self.kh * self.kw
        kk = self.kh * self.kw
        self.dbias[:] = dout.sum(axis=(0, 2, 3), dtype=np.float64)

        xf = np.zeros((c, hp * wp), dtype=x.dtype)
        col = np.empty((k, lq), dtype=x.dtype)
        # gaps between interior rows stay zero, killing the col garbage there
        dq = np.zeros((self.out_ch, lq), dtype=dout.dtype)
        dwa = np.zeros((self.out_ch, k), dtype=np.float64)
        x_int = self._plane_view(xf[:, base:], c, h, w, wp)
        d_view = self._plane_view(dq, self.out_ch, h, w, wp)

        if need_input_grad:
            # input grad is the correlation with the flipped kernel, so the
            # same im2col trick applies to the padded upstream gradient
            df = np.zeros((self.out_ch, hp * wp), dtype=dout.dtype)
            cold = np.empty((self.out_ch * kk, lq), dtype=dout.dtype)
            dxq = np.empty((self.in_ch, lq), dtype=dout.dtype)
            dx = np.empty_like(x)
            wd = self.weight.transpose(1, 0, 2, 3).reshape(self.in_ch, -1)
            df_int = self._plane_view(df[:, base:], self.out_ch, h, w, wp)
            dx_view = self._plane_view(dxq, self.in_ch, h, w, wp)

        for i in range(n):
            x_int[:] = x[i]
            self._fill_col(col, xf, c, base, lq, offs)
            d_view[:] = dout[i]
            dwa += np.matmul(dq, col.T)
            if need_input_grad:
                df_int[:] = dout[i]
                self._fill_col(cold, df, self.out_ch, base, lq, offs,
                               flip=True)
                np.matmul(wd, cold, out=dxq)
                dx[i] = dx_view
        self.dweight[:] = dwa.reshape(self.weight.shape)
        return dx if need_input_grad else None

    def release(self):
        self._x = None

    def spec(self):
        return {"kind": "Conv2D", "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kh": self.kh, "kw": self.kw, "stride": 1, "padding": "same"}


class BatchNorm2D(Layer):
    """Per-channel batch normalization (momentum 0.9, eps 1e-5).

    Training normalizes with biased batch statistics and tracks running
    averages (unbiased variance, torch-style); inference uses the
    running statistics only.
    """

    MOMENTUM = 0.9
    EPS = 1e-5

    def __init__(self, channels: int, dtype=np.float32):
        self.channels = channels
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise InvalidInput(f"batchnorm expects [N,{self.channels},H,W]")
        if training:
            m = x.shape[0] * x.shape[2] * x.shape[3]
            mean64 = x.mean(axis=(0, 2, 3), dtype=np.float64)
            sq = np.multiply(x, x)
            var = sq.mean(axis=(0, 2, 3), dtype=np.float64) - mean64 ** 2
            np.maximum(var, 0.0, out=var)
            inv_std = (1.0 / np.sqrt(var + self.EPS)).astype(x.dtype)
            mean = mean64.astype(x.dtype)
            run_var = var * (m / (m - 1.0)) if m > 1 else var
            self.running_mean[:] = (self.MOMENTUM * self.running_mean
                                    + (1.0 - self.MOMENTUM) * mean)
            self.running_var[:] = (self.MOMENTUM * self.running_var
                                   + (1.0 - self.MOMENTUM) * run_var.astype(x.dtype))
        else:
            mean = self.running_mean
            inv_std = (1.0 / np.sqrt(self.running_var.astype(np.float64)
                                     + self.EPS)).astype(x.dtype)
        xhat = np.subtract(x, mean[None, :, None, None])
        xhat *= inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, training)
        out = np.multiply(xhat, self.gamma[None, :, None, None])
        out += self.beta[None, :, None, None]
        return out

    def backward(self, dout, need_input_grad=True):
        xhat, inv_std, training = self._cache
        buf = dout * xhat
        self.dgamma[:] = buf.sum(axis=(0, 2, 3), dtype=np.float64)
        self.dbeta[:] = dout.sum(axis=(0, 2, 3), dtype=np.float64)
        if not need_input_grad:
            return None
        g = (self.gamma * inv_std)[None, :, None, None]
        if not training:
            np.multiply(dout, g, out=buf)
            return buf
        # dx = g * (dout - (sum(d) + xhat * sum(d*xhat)) / m), built in buf
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        c1 = (self.dgamma.astype(np.float64) / m).astype(dout.dtype)
        c0 = (self.dbeta.astype(np.float64) / m).astype(dout.dtype)
        np.multiply(xhat, c1[None, :, None, None], out=buf)
        buf += c0[None, :, None, None]
        np.subtract(dout, buf, out=buf)
        buf *= g
        return buf

    def release(self):
        self._cache = None

    def spec(self):
        return {"kind": "BatchNorm2D", "channels": self.channels}


def _sigmoid(x):
    # exp(-|x|) never overflows; numerator picks the matching branch
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0.0, 1.0, z)
    z += 1.0
    out /= z
    return out


class Activation(Layer):
    """Elementwise ReLU or SiLU (x * sigmoid(x))."""

    def __init__(self, kind: str):
        if kind not in ("ReLU", "SiLU"):
            raise InvalidInput(f"unknown activation {kind!r}")
        self.kind = kind
        self._x = None
        self._s = None

    def forward(self, x, training):
        self._x = x
        if self.kind == "ReLU":
            return np.maximum(x, 0.0)
        self._s = _sigmoid(x)
        return x * self._s

    def backward(self, dout, need_input_grad=True):
        x = self._x
        if self.kind == "ReLU":
            return dout * (x > 0)
        s = self._s if self._s is not None else _sigmoid(x)
        # d(silu)/dx = s * (1 + x * (1 - s)), built in one buffer
        out = 1.0 - s
        out *= x
        out += 1.0
        out *= s
        out *= dout
        return out

    def release(self):
        self._x = None
        self._s = None

    def spec(self):
        return {"kind": "Activation", "fn": self.kind}


class MaxPool2D(Layer):
    """Max pooling without padding; gradient routed to the first argmax.

    Training materializes the window buffer once to get values and
    argmax together; inference skips the argmax entirely via separable
    running maxima over contiguous slices.
    """

    def __init__(self, kh: int, kw: int, stride: int):
        if kh < 1 or kw < 1 or stride < 1:
            raise InvalidInput("pool sizes and stride must be positive")
        self.kh, self.kw, self.stride = kh, kw, stride
        self._cache = None

    def forward(self, x, training):
        n, c, h, w = x.shape
        if h < self.kh or w < self.kw:
            raise InvalidInput(f"input {h}x{w} smaller than pool window")
        s = self.stride
        ho = (h - self.kh) // s + 1
        wo = (w - self.kw) // s + 1
        if not training:
            # no argmax needed: separable running maxima on contiguous
            # slices, then subsample (much cheaper than strided gathers)
            self._cache = None
            hr = h - self.kh + 1
            r = x[:, :, 0:hr, :]
            for di in range(1, self.kh):
                r = np.maximum(r, x[:, :, di:di + hr, :],
                               out=r if di > 1 else None)
            wr = w - self.kw + 1
            out = r[:, :, :, 0:wr]
            for dj in range(1, self.kw):
                out = np.maximum(out, r[:, :, :, dj:dj + wr],
                                 out=out if dj > 1 else None)
            return out[:, :, ::s, ::s].copy()
        view = np.lib.stride_tricks.sliding_window_view(
            x, (self.kh, self.kw), axis=(2, 3))[:, :, ::s, ::s]
        windows = np.ascontiguousarray(view).reshape(n, c, ho, wo, -1)
        arg = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
        self._cache = (arg.astype(np.int8), x.shape)
        return out

    def backward(self, dout, need_input_grad=True):
        if self._cache is None:
            raise InvalidInput("maxpool backward needs a training-mode forward")
        arg, (n, c, h, w) = self._cache
        ho, wo = arg.shape[2], arg.shape[3]
        s = self.stride
        gi = (np.arange(ho) * s)[None, None, :, None] + arg // self.kw
        gj = (np.arange(wo) * s)[None, None, None, :] + arg % self.kw
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        flat_idx = (((nn * c + cc) * h + gi) * w + gj).ravel()
        dx = np.zeros(n * c * h * w, dtype=dout.dtype)
        np.add.at(dx, flat_idx, dout.ravel())
        return dx.reshape(n, c, h, w)

    def release(self):
        self._cache = None

    def spec(self):
        return {"kind": "MaxPool2D", "kh": self.kh, "kw": self.kw,
                "stride": self.stride}


class GlobalMaxPool(Layer):
    """Max over all time-frequency positions; [N,C,H,W] -> [N,C]."""

    def __init__(self):
        self._cache = None

    def forward(self, x, training):
        n, c, h, w = x.shape
        flat = x.reshape(n, c, h * w)
        arg = flat.argmax(axis=2)
        self._cache = (arg, x.shape)
        return np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def backward(self, dout, need_input_grad=True):
        arg, (n, c, h, w) = self._cache
        dx = np.zeros((n, c, h * w), dtype=dout.dtype)
        np.put_along_axis(dx, arg[:, :, None], dout[:, :, None], axis=2)
        return dx.reshape(n, c, h, w)

    def release(self):
        self._cache = None

    def spec(self):
        return {"kind": "GlobalMaxPool"}


class Dense(Layer):
    """Affine layer on [N, F] inputs: y = x @ W.T + b."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _fan_in_uniform(rng, (out_features, in_features),
                                      in_features, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.dweight, "bias": self.dbias}

    def forward(self, x, training):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise InvalidInput(
                f"dense expects [N,{self.in_features}], got {x.shape}")
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, dout, need_input_grad=True):
        self.dweight[:] = dout.T @ self._x
        self.dbias[:] = dout.sum(axis=0, dtype=np.float64)
        if not need_input_grad:
            return None
        return dout @ self.weight

    def release(self):
        self._x = None

    def spec(self):
        return {"kind": "Dense", "in_features": self.in_features,
                "out_features": self.out_features}


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        if not (0.0 <= p < 1.0):
            raise InvalidInput("dropout rate must lie in [0, 1)")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x, training, mask=None):
        if not training or self.p == 0.0:
            self._mask = None
            return x
        if mask is None:
            mask = (self.rng.random(x.shape) >= self.p).astype(x.dtype)
        self._mask = mask / np.asarray(1.0 - self.p, dtype=x.dtype)
        return x * self._mask

    def backward(self, dout, need_input_grad=True):
        if self._mask is None:
            return dout
        return dout * self._mask

    def release(self):
        self._mask = None

    def spec(self):
        return {"kind": "Dropout", "p": self.p}


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient wrt pred (64-bit reduction)."""
    if pred.shape != target.shape:
        raise InvalidInput(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    dpred = (2.0 * diff / diff.size).astype(pred.dtype)
    return loss, dpred
