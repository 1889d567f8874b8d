"""Minimal double-precision neural network stack with manual backpropagation.

Two architectures are supported: a 3-block CNN (16/32/64 same-padded 3x3
convolutions, each with batchnorm, ReLU and 2x2 max-pooling, then dropout and
a single dense output layer) for 50x8x1 image inputs, and a 4-layer dense
network (three 128-unit hidden layers with ReLU, dropout, dense output) for
16-dim vector inputs.  Every layer's backward pass is verified against
central finite differences by ``gradient_check``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    BatchTooSmallError,
    CheckpointMismatchError,
    ConfigError,
    EmptyDatasetError,
    InputTooSmallError,
    InvalidRateError,
    LabelOutOfRangeError,
    MissingCheckpointError,
    ShapeMismatchError,
)

# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass the upstream gradient where x >= 0, zero where x < 0."""
    return np.where(x >= 0.0, dy, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis (max is subtracted before exp)."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, one_hot: np.ndarray) -> float:
    """-ln p_true with probabilities clamped at 1e-12."""
    p_true = float(np.sum(np.asarray(probs) * np.asarray(one_hot)))
    return -float(np.log(max(p_true, 1e-12)))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch plus the gradient w.r.t. the logits.

    The combined softmax+CE gradient is (p - y) / batch.
    """
    probs = softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 cross-correlation.

    ``x`` is (H, W, C_in) or (N, H, W, C_in); ``kernels`` is
    (C_out, kh, kw, C_in) with odd kh/kw; output keeps the spatial size.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    y = _conv_forward(xb, np.asarray(kernels, dtype=np.float64), np.asarray(bias, dtype=np.float64))[0]
    return y[0] if single else y


def maxpool2(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 max; trailing odd row/column is dropped."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    xb = x[None] if single else x
    y = _pool_forward(xb)[0]
    return y[0] if single else y


def batchnorm(
    batch: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
    mode: str = "train",
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
) -> np.ndarray:
    """Normalize per channel (last axis); train mode uses batch statistics."""
    x = np.asarray(batch, dtype=np.float64)
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmallError(f"batch of {x.shape[0]} in train mode")
        mean, var = x.mean(axes), x.var(axes)
    elif mode == "infer":
        if running_mean is None or running_var is None:
            raise ValueError("infer mode needs running statistics")
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return gamma * (x - mean) / np.sqrt(var + eps) + beta


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map y = W x + b; W has one row per output unit."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatchError(f"input width {x.shape[-1]} != {w.shape[1]}")
    return x @ w.T + b


def dropout(x: np.ndarray, rate: float, train: bool, seed: int = 0) -> np.ndarray:
    """Inverted dropout: zero units with probability ``rate`` and rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRateError(f"dropout rate {rate} outside [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if not train or rate == 0.0:
        return x.copy()
    mask = np.random.default_rng(seed).random(x.shape) >= rate
    return x * mask / (1.0 - rate)


def sgd_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    velocities: list[np.ndarray],
    learning_rate: float,
    momentum: float,
) -> None:
    """Momentum SGD, in place: v <- mu v - lr g; theta <- theta + v."""
    for p, g, v in zip(params, grads, velocities):
        v *= momentum
        v -= learning_rate * g
        p += v


# ---------------------------------------------------------------------------
# batched layer internals
# ---------------------------------------------------------------------------


def _conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray):
    n, h, w, c_in = x.shape
    c_out, kh, kw, kc = kernels.shape
    if kc != c_in:
        raise ShapeMismatchError(f"kernel expects {kc} input channels, input has {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatchError("same padding requires odd kernel sides")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    # view: (N, H, W, C_in, kh, kw) -> columns (N*H*W, kh*kw*C_in)
    cols = view.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * c_in)
    wmat = kernels.transpose(1, 2, 3, 0).reshape(kh * kw * c_in, c_out)
    y = (cols @ wmat + bias).reshape(n, h, w, c_out)
    return y, cols


def _conv_backward(dy: np.ndarray, cols: np.ndarray, x_shape, kernels: np.ndarray):
    n, h, w, c_in = x_shape
    c_out, kh, kw, _ = kernels.shape
    ph, pw = kh // 2, kw // 2
    dy_flat = dy.reshape(n * h * w, c_out)
    db = dy_flat.sum(axis=0)
    dwmat = cols.T @ dy_flat
    dkernels = dwmat.reshape(kh, kw, c_in, c_out).transpose(3, 0, 1, 2)
    wmat = kernels.transpose(1, 2, 3, 0).reshape(kh * kw * c_in, c_out)
    dcols = (dy_flat @ wmat.T).reshape(n, h, w, kh, kw, c_in)
    dpad = np.zeros((n, h + 2 * ph, w + 2 * pw, c_in))
    for i in range(kh):
        for j in range(kw):
            dpad[:, i : i + h, j : j + w, :] += dcols[:, :, :, i, j, :]
    dx = dpad[:, ph : ph + h, pw : pw + w, :]
    return dx, dkernels, db


def _pool_forward(x: np.ndarray):
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise InputTooSmallError(f"maxpool2 needs H, W >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    cropped = x[:, : 2 * h2, : 2 * w2, :]
    # cells in row-major order within each 2x2 block; argmax ties pick the first
    blocks = cropped.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h2, w2, 4, c)
    idx = blocks.argmax(axis=3)
    y = np.take_along_axis(blocks, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return y, idx


def _pool_backward(dy: np.ndarray, idx: np.ndarray, x_shape):
    n, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    dblocks = np.zeros((n, h2, w2, 4, c))
    np.put_along_axis(dblocks, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dx = np.zeros((n, h, w, c))
    dx[:, : 2 * h2, : 2 * w2, :] = (
        dblocks.reshape(n, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * h2, 2 * w2, c)
    )
    return dx


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Conv2D:
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        fan_in = kernel * kernel * c_in
        fan_out = kernel * kernel * c_out
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.kernels = rng.uniform(-limit, limit, (c_out, kernel, kernel, c_in))
        self.bias = np.zeros(c_out)
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y, cols = _conv_forward(x, self.kernels, self.bias)
        self._cache = (cols, x.shape)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        cols, x_shape = self._cache
        dx, self.d_kernels, self.d_bias = _conv_backward(dy, cols, x_shape, self.kernels)
        return dx

    def params(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def grads(self):
        return {"kernels": self.d_kernels, "bias": self.d_bias}


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.w = rng.uniform(-limit, limit, (n_out, n_in))
        self.b = np.zeros(n_out)
        self._x = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.shape[-1] != self.w.shape[1]:
            raise ShapeMismatchError(f"input width {x.shape[-1]} != {self.w.shape[1]}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.d_w = dy.T @ self._x
        self.d_b = dy.sum(axis=0)
        return dy @ self.w

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.d_w, "b": self.d_b}


class ReLU:
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return relu_backward(dy, self._x)

    def params(self):
        return {}

    def grads(self):
        return {}


class MaxPool2:
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y, idx = _pool_forward(x)
        self._cache = (idx, x.shape)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        idx, x_shape = self._cache
        return _pool_backward(dy, idx, x_shape)

    def params(self):
        return {}

    def grads(self):
        return {}


class BatchNorm:
    """Channel-wise batch normalization over all leading axes.

    Train mode normalizes by batch statistics and updates running statistics
    with momentum 0.9; infer mode uses the running statistics.  The backward
    pass is the full batch-coupled gradient.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        axes = tuple(range(x.ndim - 1))
        if train:
            if x.shape[0] < 2:
                raise BatchTooSmallError(f"batchnorm needs batch >= 2, got {x.shape[0]}")
            mean, var = x.mean(axes), x.var(axes)
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv, axes, train)
        return self.gamma * xhat + self.beta

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv, axes, trained = self._cache
        self.d_gamma = (dy * xhat).sum(axes)
        self.d_beta = dy.sum(axes)
        dxhat = dy * self.gamma
        if not trained:
            return dxhat * inv
        m_mean = lambda a: a.mean(axes)  # noqa: E731
        return inv * (dxhat - m_mean(dxhat) - xhat * m_mean(dxhat * xhat))

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.d_gamma, "beta": self.d_beta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Dropout:
    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise InvalidRateError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate
        self.rng = rng
        self.enabled = True
        self._mask = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if not train or not self.enabled or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy if self._mask is None else dy * self._mask

    def params(self):
        return {}

    def grads(self):
        return {}


class Flatten:
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy.reshape(self._shape)

    def params(self):
        return {}

    def grads(self):
        return {}


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------

CNN_KIND = "cnn"
FC_KIND = "fc"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; ``kind`` is "cnn" (image input) or "fc" (vector input)."""

    kind: str
    n_classes: int
    input_shape: tuple[int, ...]
    conv_filters: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    hidden_units: int = 128
    hidden_layers: int = 3
    dropout_rate: float = 0.5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in (CNN_KIND, FC_KIND):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.kind == CNN_KIND and len(self.input_shape) != 3:
            raise ConfigError("cnn input must be (H, W, C)")
        if self.kind == FC_KIND and len(self.input_shape) != 1:
            raise ConfigError("fc input must be (D,)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_classes": self.n_classes,
            "input_shape": list(self.input_shape),
            "conv_filters": list(self.conv_filters),
            "kernel": self.kernel,
            "hidden_units": self.hidden_units,
            "hidden_layers": self.hidden_layers,
            "dropout_rate": self.dropout_rate,
            "bn_eps": self.bn_eps,
            "bn_momentum": self.bn_momentum,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            kind=d["kind"],
            n_classes=d["n_classes"],
            input_shape=tuple(d["input_shape"]),
            conv_filters=tuple(d["conv_filters"]),
            kernel=d["kernel"],
            hidden_units=d["hidden_units"],
            hidden_layers=d["hidden_layers"],
            dropout_rate=d["dropout_rate"],
            bn_eps=d["bn_eps"],
            bn_momentum=d["bn_momentum"],
        )


def image_model_spec(n_classes: int, dropout_rate: float = 0.5) -> ModelSpec:
    return ModelSpec(CNN_KIND, n_classes, (50, 8, 1), dropout_rate=dropout_rate)


def vector_model_spec(n_classes: int, dropout_rate: float = 0.5) -> ModelSpec:
    return ModelSpec(FC_KIND, n_classes, (16,), dropout_rate=dropout_rate)


class Network:
    """An ordered layer stack ending in class logits."""

    def __init__(self, spec: ModelSpec, layers: list):
        self.spec = spec
        self.layers = layers

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.forward(x, train=False))

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out.append((f"{i}.{name}", arr))
        return out

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads().items():
                out.append((f"{i}.{name}", arr))
        return out

    def set_dropout_enabled(self, enabled: bool) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.enabled = enabled

    def activation_signature(self) -> list[np.ndarray]:
        """ReLU sign masks and pooling argmax indices from the last forward.

        Two inputs with equal signatures lie in the same piecewise-smooth
        region of the network, so finite differences between them are valid.
        """
        sig = []
        for layer in self.layers:
            if isinstance(layer, ReLU):
                sig.append(layer._x >= 0.0)
            elif isinstance(layer, MaxPool2):
                sig.append(layer._cache[0])
        return sig


def build_network(spec: ModelSpec, seed: int = 0) -> Network:
    """Create a network with seeded Glorot-uniform weights and zero biases."""
    init_rng = np.random.default_rng([seed, 0])
    layers: list = []
    if spec.kind == CNN_KIND:
        h, w, c = spec.input_shape
        for block, filters in enumerate(spec.conv_filters):
            layers.append(Conv2D(c, filters, spec.kernel, init_rng))
            layers.append(BatchNorm(filters, spec.bn_eps, spec.bn_momentum))
            layers.append(ReLU())
            layers.append(MaxPool2())
            h, w, c = h // 2, w // 2, filters
        layers.append(Flatten())
        layers.append(Dropout(spec.dropout_rate, np.random.default_rng([seed, 1])))
        layers.append(Dense(h * w * c, spec.n_classes, init_rng))
    else:
        d = spec.input_shape[0]
        for _ in range(spec.hidden_layers):
            layers.append(Dense(d, spec.hidden_units, init_rng))
            layers.append(ReLU())
            d = spec.hidden_units
        layers.append(Dropout(spec.dropout_rate, np.random.default_rng([seed, 1])))
        layers.append(Dense(d, spec.n_classes, init_rng))
    return Network(spec, layers)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    dropout_rate: float = 0.5
    seed: int = 0
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


class SGD:
    """Momentum SGD over a network's parameter arrays."""

    def __init__(self, net: Network, learning_rate: float, momentum: float):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocities = [np.zeros_like(arr) for _, arr in net.parameters()]

    def step(self, net: Network) -> None:
        params = [arr for _, arr in net.parameters()]
        grads = [arr for _, arr in net.gradients()]
        sgd_step(params, grads, self.velocities, self.learning_rate, self.momentum)


def train(
    spec: ModelSpec, x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[Network, list[float]]:
    """Mini-batch momentum-SGD training with seeded per-epoch shuffling.

    Returns the trained network and the per-epoch mean loss.  Deterministic
    for a fixed seed in single-threaded execution.  A trailing batch of one
    sample is skipped (batch statistics need >= 2 samples).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise EmptyDatasetError("no training samples")
    if len(x) != len(y):
        raise ShapeMismatchError(f"{len(x)} samples vs {len(y)} labels")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise LabelOutOfRangeError(f"labels must lie in [0, {spec.n_classes})")

    spec = replace(spec, dropout_rate=cfg.dropout_rate, bn_eps=cfg.bn_eps)
    net = build_network(spec, seed=cfg.seed)
    opt = SGD(net, cfg.learning_rate, cfg.momentum)
    shuffle_rng = np.random.default_rng([cfg.seed, 2])

    losses: list[float] = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(x))
        total, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            if len(idx) < 2:
                continue
            logits = net.forward(x[idx], train=True)
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            net.backward(dlogits)
            opt.step(net)
            total += loss * len(idx)
            seen += len(idx)
        if seen == 0:
            raise BatchTooSmallError("need at least 2 samples to train")
        losses.append(total / seen)
    return net, losses


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def gradient_check(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    *,
    step: float = 1e-5,
    max_per_param: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central finite differences.

    Dropout is disabled and batchnorm held in train (batch-statistics) mode so
    the loss is a deterministic function of the parameters.  Arrays larger
    than ``max_per_param`` are subsampled.  Relative error uses
    |a - n| / max(|a|, |n|, 1e-6).

    A central difference only estimates the derivative where the loss is
    smooth across [theta - h, theta + h]; a perturbation that flips a ReLU
    sign or a pooling argmax puts a kink inside that bracket.  Indices whose
    two evaluations land in different piecewise-smooth regions (detected by
    comparing activation signatures) are skipped; a wrong-but-smooth backward
    pass leaves signatures untouched, so real gradient bugs are not masked.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    net.set_dropout_enabled(False)
    saved_running = [
        (layer, layer.running_mean.copy(), layer.running_var.copy())
        for layer in net.layers
        if isinstance(layer, BatchNorm)
    ]
    pick_rng = np.random.default_rng([seed, 3])
    try:
        def loss_and_signature() -> tuple[float, list[np.ndarray]]:
            logits = net.forward(x, train=True)
            loss, _ = softmax_cross_entropy(logits, y)
            return loss, net.activation_signature()

        logits = net.forward(x, train=True)
        _, dlogits = softmax_cross_entropy(logits, y)
        net.backward(dlogits)
        analytic = {name: arr.copy() for name, arr in net.gradients()}

        worst = 0.0
        for name, arr in net.parameters():
            flat = arr.reshape(-1)
            n_vals = flat.shape[0]
            if n_vals > max_per_param:
                indices = pick_rng.choice(n_vals, size=max_per_param, replace=False)
            else:
                indices = np.arange(n_vals)
            a_flat = analytic[name].reshape(-1)
            for i in indices:
                orig = flat[i]
                flat[i] = orig + step
                up, sig_up = loss_and_signature()
                flat[i] = orig - step
                down, sig_down = loss_and_signature()
                flat[i] = orig
                if not all(np.array_equal(a, b) for a, b in zip(sig_up, sig_down)):
                    continue  # kink inside the bracket
                numeric = (up - down) / (2.0 * step)
                a = a_flat[i]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
                worst = max(worst, rel)
        return worst
    finally:
        net.set_dropout_enabled(True)
        for layer, mean, var in saved_running:
            layer.running_mean = mean
            layer.running_var = var


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(net: Network, path, *, config_hash: str | None = None, meta: dict | None = None) -> None:
    """Write a JSON checkpoint: spec echo plus per-layer parameter arrays."""
    state: dict[str, list] = {}
    for name, arr in net.parameters():
        state[name] = arr.tolist()
    for i, layer in enumerate(net.layers):
        if isinstance(layer, BatchNorm):
            for sname, arr in layer.state().items():
                state[f"{i}.{sname}"] = arr.tolist()
    doc = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "spec": net.spec.to_dict(),
        "state": state,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Network:
    """Rebuild a network from a checkpoint, validating every array shape."""
    p = Path(path)
    if not p.is_file():
        raise MissingCheckpointError(str(p))
    doc = json.loads(p.read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint version {doc.get('version')}")
    spec = ModelSpec.from_dict(doc["spec"])
    net = build_network(spec, seed=0)
    state = doc["state"]
    expected = dict(net.parameters())
    for i, layer in enumerate(net.layers):
        if isinstance(layer, BatchNorm):
            for sname, arr in layer.state().items():
                expected[f"{i}.{sname}"] = arr
    if sorted(expected) != sorted(state):
        raise CheckpointMismatchError("checkpoint layer names do not match the spec")
    for name, target in expected.items():
        arr = np.asarray(state[name], dtype=np.float64)
        if arr.shape != target.shape:
            raise CheckpointMismatchError(f"{name}: shape {arr.shape} != {target.shape}")
        target[...] = arr
    return net
