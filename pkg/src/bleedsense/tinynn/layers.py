"""Batched numpy kernels for the tiny CNN: 3x3 same-padding convolution,
floor-mode 2x2 max pooling, ReLU and softmax, each with its backward pass.

Tensors are float64 arrays laid out (N, C, H, W). The single-sample helpers
accept (C, H, W) as well.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
    return x, False


def im2col3x3(x):
    """(N, C, H, W) -> (N*H*W, C*9) patches of the zero-padded input."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    patches = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return patches.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def col2im3x3(dcols, shape):
    """Adjoint of :func:`im2col3x3`: scatter-add patch gradients back to the input."""
    n, c, h, w = shape
    d = dcols.reshape(n, h, w, c, 3, 3).transpose(0, 3, 4, 5, 1, 2)  # (N, C, 3, 3, H, W)
    dxp = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += d[:, :, i, j]
    return dxp[:, :, 1:-1, 1:-1]


def conv2d_3x3_pad1(x, weight, bias):
    """3x3 convolution, stride 1, one pixel of zero padding (output keeps H, W)."""
    xb, single = _as_batch(x)
    weight = np.asarray(weight, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ValueError(f"weights must be (C_out, C_in, 3, 3), got {weight.shape}")
    if weight.shape[1] != xb.shape[1]:
        raise ValueError(f"input has {xb.shape[1]} channels, weights expect {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ValueError("bias length must equal the number of output channels")
    n, _, h, w = xb.shape
    out = im2col3x3(xb) @ weight.reshape(weight.shape[0], -1).T + bias
    out = out.reshape(n, h, w, -1).transpose(0, 3, 1, 2)
    return out[0] if single else out


def conv2d_backward(dout, x, weight):
    """Gradients (dx, dweight, dbias) of :func:`conv2d_3x3_pad1`."""
    n, c_out, h, w = dout.shape
    cols = im2col3x3(x)
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dweight = (d2.T @ cols).reshape(weight.shape)
    dbias = d2.sum(axis=0)
    dx = col2im3x3(d2 @ weight.reshape(c_out, -1), x.shape)
    return dx, dweight, dbias


def maxpool2x2(x):
    """2x2 max pooling with stride 2; trailing odd rows/columns are dropped."""
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if xb.size == 0:
        raise ValueError("empty input")
    if h < 2 and w < 2:
        raise ValueError("input too small to pool")
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ValueError(f"cannot pool a {h}x{w} map with a 2x2 window")
    blocks = xb[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2)
    out = blocks.max(axis=(3, 5))
    return out[0] if single else out


def maxpool_backward(dout, x):
    """Route each pooled gradient to the first maximal element of its block."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    blocks = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, h2, w2, 4)
    mask = np.zeros_like(flat)
    np.put_along_axis(mask, flat.argmax(axis=-1)[..., None], 1.0, axis=-1)
    dflat = mask * dout[..., None]
    dx = np.zeros_like(x)
    dx[:, :, :2 * h2, :2 * w2] = (
        dflat.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    )
    return dx


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
