"""Minimal width-scalable CNN stack with manual backprop.

Layers: 3x3 same-padding convolution, static batch normalization (sBN),
ReLU, 2x2 max pooling, dense. Parameters live in plain dicts of float64
numpy arrays ("param sets") keyed by layer name, so models at different
width rates are just differently-shaped dicts over the same names.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BN_EPS = 1e-5

ParamSet = dict  # layer name -> np.ndarray


class ShapeMismatchError(ValueError):
    """Raised when a tensor does not match the shape a layer expects."""

    def __init__(self, layer: str, expected, actual):
        self.layer = layer
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"layer {layer!r}: expected shape {self.expected}, got {self.actual}"
        )


class NonFiniteGradientError(ValueError):
    def __init__(self, layer: str):
        self.layer = layer
        super().__init__(f"non-finite gradient in layer {layer!r}")


@dataclass(frozen=True)
class SgdConfig:
    """SGD with momentum and weight decay."""

    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5.0e-4
    epochs: int = 1
    batch_size: int = 10

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class BnStats:
    """Per-BN-layer running mean/variance with contributing sample counts."""

    mean: dict = field(default_factory=dict)   # layer -> (C,) array
    var: dict = field(default_factory=dict)    # layer -> (C,) array
    count: dict = field(default_factory=dict)  # layer -> float

    def merge_layer(self, layer: str, mean: np.ndarray, var: np.ndarray, count: float):
        """Fold one batch's channel moments into the running stats.

        Uses the pairwise (Chan et al.) merge so the result matches a
        single pass over the concatenated data to numerical precision.
        """
        if count == 0:
            return
        if layer not in self.count:
            self.mean[layer] = np.array(mean, dtype=float)
            self.var[layer] = np.array(var, dtype=float)
            self.count[layer] = float(count)
            return
        n_a, n_b = self.count[layer], float(count)
        n = n_a + n_b
        delta = mean - self.mean[layer]
        self.mean[layer] = self.mean[layer] + delta * (n_b / n)
        self.var[layer] = (
            n_a * self.var[layer] + n_b * var + delta**2 * (n_a * n_b / n)
        ) / n
        self.count[layer] = n


@dataclass(frozen=True)
class CnnArch:
    """Fixed two-conv CNN; hidden channel counts scale with the model rate.

    conv1 -> sBN -> ReLU -> pool2 -> conv2 -> sBN -> ReLU -> pool2
    -> flatten -> dense. Input channels and output classes never scale.
    """

    in_channels: int = 1
    image_size: int = 28
    hidden_channels: int = 16
    num_classes: int = 10

    def __post_init__(self):
        if self.image_size % 4 != 0:
            raise ValueError("image_size must be divisible by 4 (two 2x2 pools)")

    @property
    def feature_size(self) -> int:
        return self.image_size // 4

    def channels(self, rate: float) -> tuple[int, int]:
        c1 = max(1, math.ceil(self.hidden_channels * rate))
        c2 = max(1, math.ceil(2 * self.hidden_channels * rate))
        return c1, c2

    def param_shapes(self, rate: float = 1.0) -> dict:
        c1, c2 = self.channels(rate)
        f = self.feature_size
        return {
            "conv1.w": (c1, self.in_channels, 3, 3),
            "conv1.b": (c1,),
            "bn1.g": (c1,),
            "bn1.b": (c1,),
            "conv2.w": (c2, c1, 3, 3),
            "conv2.b": (c2,),
            "bn2.g": (c2,),
            "bn2.b": (c2,),
            "fc.w": (self.num_classes, c2 * f * f),
            "fc.b": (self.num_classes,),
        }

    def layer_kinds(self) -> dict:
        return {
            "conv1.w": "conv-kernel", "conv1.b": "conv-bias",
            "bn1.g": "bn-gamma", "bn1.b": "bn-beta",
            "conv2.w": "conv-kernel", "conv2.b": "conv-bias",
            "bn2.g": "bn-gamma", "bn2.b": "bn-beta",
            "fc.w": "dense-weight", "fc.b": "dense-bias",
        }

    def init_params(self, rng: np.random.Generator, rate: float = 1.0) -> ParamSet:
        """Uniform +-1/sqrt(fan_in) weights; BN gamma 1, beta 0."""
        params = {}
        for name, shape in self.param_shapes(rate).items():
            if name.startswith("bn"):
                fill = 1.0 if name.endswith(".g") else 0.0
                params[name] = np.full(shape, fill, dtype=float)
            elif name == "conv1.w" or name == "conv1.b":
                bound = 1.0 / math.sqrt(self.in_channels * 9)
                params[name] = rng.uniform(-bound, bound, size=shape)
            elif name == "conv2.w" or name == "conv2.b":
                c1 = self.channels(rate)[0]
                bound = 1.0 / math.sqrt(c1 * 9)
                params[name] = rng.uniform(-bound, bound, size=shape)
            else:  # fc
                fan_in = self.param_shapes(rate)["fc.w"][1]
                bound = 1.0 / math.sqrt(fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape)
        return params


# ---------------------------------------------------------------------------
# layer primitives

def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(cols: np.ndarray, x_shape: tuple, k: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    cols = cols.reshape(n, c, k, k, h, w)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + h, j:j + w] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


def conv2d_forward(x, w, b, layer: str):
    n, c_in, h, wd = x.shape
    if w.ndim != 4 or w.shape[1] != c_in:
        raise ShapeMismatchError(layer, (w.shape[0], c_in, 3, 3), w.shape)
    cols = _im2col(x, 3, 1)
    wf = w.reshape(w.shape[0], -1)
    y = np.matmul(wf, cols).reshape(n, w.shape[0], h, wd) + b[None, :, None, None]
    return y, (x.shape, cols, wf)


def conv2d_backward(dy, cache):
    x_shape, cols, wf = cache
    n, c_out, h, w = dy.shape
    dyf = dy.reshape(n, c_out, h * w)
    dwf = np.einsum("noc,nic->oi", dyf, cols)
    db = dy.sum(axis=(0, 2, 3))
    dcols = np.matmul(wf.T, dyf)
    dx = _col2im(dcols, x_shape, 3, 1)
    return dx, dwf.reshape(c_out, x_shape[1], 3, 3), db


def dense_forward(x, w, b, layer: str):
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(layer, (x.shape[0], w.shape[1]), x.shape)
    return x @ w.T + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def bn_forward_train(x, gamma, beta):
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv, gamma)


def bn_backward(dy, cache):
    xhat, inv, gamma = cache
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    dx = (
        dxhat
        - dxhat.mean(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
    ) * inv[None, :, None, None]
    return dx, dgamma, dbeta


def bn_forward_eval(x, gamma, beta, mean, var):
    inv = 1.0 / np.sqrt(var + BN_EPS)
    return gamma[None, :, None, None] * (x - mean[None, :, None, None]) * inv[
        None, :, None, None
    ] + beta[None, :, None, None]


def maxpool2_forward(x):
    n, c, h, w = x.shape
    xr = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    xr = xr.reshape(n, c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, x_shape = cache
    n, c, h, w = x_shape
    dxr = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
    dx = dxr.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dx.reshape(n, c, h, w)


def softmax_cross_entropy(logits, labels):
    """Returns (per-example losses, dlogits for the mean loss)."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    losses = logsumexp - z[np.arange(len(labels)), labels]
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    return losses, dlogits


# ---------------------------------------------------------------------------
# whole-network forward/backward

def _check_input(params: ParamSet, x: np.ndarray):
    c_in = params["conv1.w"].shape[1]
    if x.ndim != 4 or x.shape[1] != c_in:
        raise ShapeMismatchError("input", ("N", c_in, "H", "W"), x.shape)
    if not np.isfinite(x).all():
        raise ValueError("input batch contains non-finite values")


def forward_train(params: ParamSet, x: np.ndarray):
    """Forward pass using the current batch's BN statistics (sBN training
    mode). Returns (logits, caches) for backward()."""
    _check_input(params, x)
    caches = {}
    a1, caches["conv1"] = conv2d_forward(x, params["conv1.w"], params["conv1.b"], "conv1")
    h1, caches["bn1"] = bn_forward_train(a1, params["bn1.g"], params["bn1.b"])
    r1 = np.maximum(h1, 0.0)
    caches["relu1"] = r1 > 0
    p1, caches["pool1"] = maxpool2_forward(r1)
    a2, caches["conv2"] = conv2d_forward(p1, params["conv2.w"], params["conv2.b"], "conv2")
    h2, caches["bn2"] = bn_forward_train(a2, params["bn2.g"], params["bn2.b"])
    r2 = np.maximum(h2, 0.0)
    caches["relu2"] = r2 > 0
    p2, caches["pool2"] = maxpool2_forward(r2)
    flat = p2.reshape(p2.shape[0], -1)
    logits, caches["fc"] = dense_forward(flat, params["fc.w"], params["fc.b"], "fc")
    caches["p2_shape"] = p2.shape
    return logits, caches


def backward(dlogits: np.ndarray, caches: dict) -> ParamSet:
    grads = {}
    dflat, grads["fc.w"], grads["fc.b"] = dense_backward(dlogits, caches["fc"])
    dp2 = dflat.reshape(caches["p2_shape"])
    dr2 = maxpool2_backward(dp2, caches["pool2"])
    dh2 = dr2 * caches["relu2"]
    da2, grads["bn2.g"], grads["bn2.b"] = bn_backward(dh2, caches["bn2"])
    dp1, grads["conv2.w"], grads["conv2.b"] = conv2d_backward(da2, caches["conv2"])
    dr1 = maxpool2_backward(dp1, caches["pool1"])
    dh1 = dr1 * caches["relu1"]
    da1, grads["bn1.g"], grads["bn1.b"] = bn_backward(dh1, caches["bn1"])
    _, grads["conv1.w"], grads["conv1.b"] = conv2d_backward(da1, caches["conv1"])
    return grads


def forward_eval(params: ParamSet, x: np.ndarray, stats: BnStats) -> np.ndarray:
    """Forward pass normalizing BN layers with collected global statistics."""
    _check_input(params, x)
    a1, _ = conv2d_forward(x, params["conv1.w"], params["conv1.b"], "conv1")
    h1 = bn_forward_eval(a1, params["bn1.g"], params["bn1.b"], stats.mean["bn1"], stats.var["bn1"])
    p1, _ = maxpool2_forward(np.maximum(h1, 0.0))
    a2, _ = conv2d_forward(p1, params["conv2.w"], params["conv2.b"], "conv2")
    h2 = bn_forward_eval(a2, params["bn2.g"], params["bn2.b"], stats.mean["bn2"], stats.var["bn2"])
    p2, _ = maxpool2_forward(np.maximum(h2, 0.0))
    flat = p2.reshape(p2.shape[0], -1)
    logits, _ = dense_forward(flat, params["fc.w"], params["fc.b"], "fc")
    return logits


def loss_and_grads(params: ParamSet, x: np.ndarray, labels: np.ndarray):
    logits, caches = forward_train(params, x)
    losses, dlogits = softmax_cross_entropy(logits, labels)
    return losses, backward(dlogits, caches)


# ---------------------------------------------------------------------------
# optimizer and training

def zeros_like_params(params: ParamSet) -> ParamSet:
    return {k: np.zeros_like(v) for k, v in params.items()}


def sgd_step(params: ParamSet, grads: ParamSet, cfg: SgdConfig, velocity: ParamSet):
    """v' = momentum*v + (g + wd*w); w' = w - lr*v'. Returns (params, velocity)."""
    new_p, new_v = {}, {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape or velocity[name].shape != w.shape:
            raise ShapeMismatchError(name, w.shape, g.shape)
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(name)
        v = cfg.momentum * velocity[name] + (g + cfg.weight_decay * w)
        new_v[name] = v
        new_p[name] = w - cfg.learning_rate * v
    return new_p, new_v


def local_train(
    params: ParamSet,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: SgdConfig,
    rng: np.random.Generator,
    max_batches: Optional[int] = None,
):
    """Mini-batch SGD on one client's partition.

    BN layers run in sBN mode: batch statistics in the forward pass, no
    running-statistic tracking. Returns (params, final-epoch per-example
    losses, distinct examples seen in the final executed epoch).
    """
    n = len(images)
    if n == 0:
        raise ValueError("cannot train on an empty partition")
    velocity = zeros_like_params(params)
    budget = math.inf if max_batches is None else int(max_batches)
    last_losses: list = []
    last_seen = 0
    for _ in range(cfg.epochs):
        if budget <= 0:
            break
        order = rng.permutation(n)
        epoch_losses = []
        seen = 0
        for start in range(0, n, cfg.batch_size):
            if budget <= 0:
                break
            idx = order[start:start + cfg.batch_size]
            losses, grads = loss_and_grads(params, images[idx], labels[idx])
            params, velocity = sgd_step(params, grads, cfg, velocity)
            epoch_losses.extend(losses.tolist())
            seen += len(idx)
            budget -= 1
        if seen:
            last_losses, last_seen = epoch_losses, seen
    return params, last_losses, last_seen


def collect_sbn_stats(
    params: ParamSet,
    client_batches: list,
    batch_size: int = 256,
) -> BnStats:
    """Cumulative global BN statistics from sequentially visited clients.

    ``client_batches`` is an ordered list of per-client image arrays. The
    first BN layer's input statistics are streamed over all clients, then a
    second pass (normalizing bn1 with the finalized stats) streams the
    second BN layer. Each layer's result therefore matches a direct
    one-pass computation over the concatenated data and is independent of
    the client visiting order up to floating-point merge error.
    """
    stats = BnStats()
    for images in client_batches:
        for start in range(0, len(images), batch_size):
            x = images[start:start + batch_size]
            a1, _ = conv2d_forward(x, params["conv1.w"], params["conv1.b"], "conv1")
            m = a1.shape[0] * a1.shape[2] * a1.shape[3]
            stats.merge_layer("bn1", a1.mean(axis=(0, 2, 3)), a1.var(axis=(0, 2, 3)), m)
    for images in client_batches:
        for start in range(0, len(images), batch_size):
            x = images[start:start + batch_size]
            a1, _ = conv2d_forward(x, params["conv1.w"], params["conv1.b"], "conv1")
            h1 = bn_forward_eval(a1, params["bn1.g"], params["bn1.b"], stats.mean["bn1"], stats.var["bn1"])
            p1, _ = maxpool2_forward(np.maximum(h1, 0.0))
            a2, _ = conv2d_forward(p1, params["conv2.w"], params["conv2.b"], "conv2")
            m = a2.shape[0] * a2.shape[2] * a2.shape[3]
            stats.merge_layer("bn2", a2.mean(axis=(0, 2, 3)), a2.var(axis=(0, 2, 3)), m)
    return stats
