"""Tiny 2D-CNN: conv(1->4) -> ReLU -> pool -> conv(4->8) -> ReLU -> pool -> fc(48->64) -> ReLU -> fc(64->6)."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import layers

N_CLASSES = 6
INPUT_SHAPE = (1, 6, 24)

# Activation shapes per sample, checked on every forward pass.
SHAPE_CHAIN = {
    "conv1": (4, 6, 24),
    "pool1": (4, 3, 12),
    "conv2": (8, 3, 12),
    "pool2": (8, 1, 6),
    "flat": (48,),
    "fc1": (64,),
    "logits": (N_CLASSES,),
}

PARAM_SHAPES = {
    "conv1_w": (4, 1, 3, 3),
    "conv1_b": (4,),
    "conv2_w": (8, 4, 3, 3),
    "conv2_b": (8,),
    "fc1_w": (64, 48),
    "fc1_b": (64,),
    "fc2_w": (N_CLASSES, 64),
    "fc2_b": (N_CLASSES,),
}


@dataclass
class ModelParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def __post_init__(self):
        for name, shape in PARAM_SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite values")
            setattr(self, name, arr)

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def zeros(cls) -> "ModelParams":
        return cls(**{k: np.zeros(s) for k, s in PARAM_SHAPES.items()})

    @classmethod
    def init(cls, rng: np.random.Generator) -> "ModelParams":
        """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
        arrays = {}
        for name, shape in PARAM_SHAPES.items():
            if name.endswith("_b"):
                arrays[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(6.0 / fan_in)
                arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(**arrays)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.names()}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.as_dict().values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.as_dict().values()])

    @classmethod
    def unflatten(cls, vec: np.ndarray) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        total = sum(int(np.prod(s)) for s in PARAM_SHAPES.values())
        if vec.shape != (total,):
            raise ValueError(f"expected {total} values, got {vec.shape}")
        out, pos = {}, 0
        for name, shape in PARAM_SHAPES.items():
            size = int(np.prod(shape))
            out[name] = vec[pos:pos + size].reshape(shape).copy()
            pos += size
        return cls(**out)


def as_input_batch(x) -> np.ndarray:
    """Accept (6,24), (N,6,24), (1,6,24) or (N,1,6,24); return (N,1,6,24)."""
    x = np.asarray(x, dtype=float)
    if x.shape == INPUT_SHAPE[1:]:
        return x[None, None]
    if x.ndim == 3 and x.shape[1:] == INPUT_SHAPE[1:]:
        return x[:, None]
    if x.ndim == 4 and x.shape[1:] == INPUT_SHAPE:
        return x
    raise ValueError(f"input must be 6x24 windows, got shape {x.shape}")


def _check(name, arr):
    if arr.shape[1:] != SHAPE_CHAIN[name]:
        raise AssertionError(f"{name}: shape {arr.shape[1:]} != {SHAPE_CHAIN[name]}")


def forward(params: ModelParams, x, capture: bool = False):
    """Logits (N, 6) for normalized windows; with ``capture`` also the activations dict."""
    xb = as_input_batch(x)
    z1 = layers.conv2d_3x3_pad1(xb, params.conv1_w, params.conv1_b)
    _check("conv1", z1)
    a1 = layers.relu(z1)
    p1 = layers.maxpool2x2(a1)
    _check("pool1", p1)
    z2 = layers.conv2d_3x3_pad1(p1, params.conv2_w, params.conv2_b)
    _check("conv2", z2)
    a2 = layers.relu(z2)
    p2 = layers.maxpool2x2(a2)
    _check("pool2", p2)
    flat = p2.reshape(len(p2), -1)
    _check("flat", flat)
    z3 = flat @ params.fc1_w.T + params.fc1_b
    h = layers.relu(z3)
    _check("fc1", h)
    logits = h @ params.fc2_w.T + params.fc2_b
    _check("logits", logits)
    if not capture:
        return logits
    cache = {"input": xb, "conv1": z1, "relu1": a1, "pool1": p1, "conv2": z2, "relu2": a2,
             "pool2": p2, "flat": flat, "fc1_pre": z3, "fc1": h, "logits": logits}
    return logits, cache


def cross_entropy(logits, y) -> float:
    logp = layers.log_softmax(logits)
    return float(-logp[np.arange(len(y)), y].mean())


def backward(params: ModelParams, cache: dict, dlogits: np.ndarray) -> ModelParams:
    """Backpropagate ``dlogits`` (N, 6) through the cached forward pass."""
    grads = {}
    grads["fc2_w"] = dlogits.T @ cache["fc1"]
    grads["fc2_b"] = dlogits.sum(axis=0)
    dh = dlogits @ params.fc2_w
    dz3 = dh * (cache["fc1_pre"] > 0)
    grads["fc1_w"] = dz3.T @ cache["flat"]
    grads["fc1_b"] = dz3.sum(axis=0)
    dp2 = (dz3 @ params.fc1_w).reshape(cache["pool2"].shape)
    da2 = layers.maxpool_backward(dp2, cache["relu2"])
    dz2 = da2 * (cache["conv2"] > 0)
    dp1, grads["conv2_w"], grads["conv2_b"] = layers.conv2d_backward(dz2, cache["pool1"], params.conv2_w)
    da1 = layers.maxpool_backward(dp1, cache["relu1"])
    dz1 = da1 * (cache["conv1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = layers.conv2d_backward(dz1, cache["input"], params.conv1_w)
    return ModelParams(**grads)


def loss_and_grad(params: ModelParams, x, y) -> tuple[float, ModelParams]:
    """Mean softmax cross-entropy over the batch and its exact gradient."""
    y = np.asarray(y)
    xb = as_input_batch(x)
    if len(y) == 0 or len(y) != len(xb):
        raise ValueError("batch must be non-empty with one label per window")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= N_CLASSES:
        raise ValueError(f"labels must be integers in 0..{N_CLASSES - 1}")
    logits, cache = forward(params, xb, capture=True)
    probs = layers.softmax(logits)
    loss = cross_entropy(logits, y)
    dlogits = probs
    dlogits[np.arange(len(y)), y] -= 1.0
    dlogits /= len(y)
    return loss, backward(params, cache, dlogits)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for name in ModelParams.names():
            g = getattr(grads, name)
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p = getattr(params, name)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
