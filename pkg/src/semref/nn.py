"""Minimal convolutional layers with hand-written backward passes.

Everything operates on NCHW float arrays. Each layer caches what its
backward pass needs; `backward` returns the input gradient and stores
parameter gradients on the layer. Analytic gradients are validated
against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np


class Conv3x3:
    """3x3 same-padding convolution over sliding windows of the padded input."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32):
        fan_in = in_channels * 9
        fan_out = out_channels * 9
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.W = rng.uniform(-limit, limit, size=(out_channels, in_channels, 3, 3)).astype(dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._xp = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        self._xp = xp
        out = np.einsum("nchwij,fcij->nfhw", win, self.W, optimize=True)
        return out + self.b[None, :, None, None]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xp = self._xp
        self.gb += grad.sum(axis=(0, 2, 3))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        self.gW += np.einsum("nfhw,nchwij->fcij", grad, win, optimize=True)
        # Input gradient is the full correlation of grad with the flipped kernel.
        gp = np.pad(grad, ((0, 0), (0, 0), (2, 2), (2, 2)))
        gwin = np.lib.stride_tricks.sliding_window_view(gp, (3, 3), axis=(2, 3))
        flipped = self.W[:, :, ::-1, ::-1]
        gxp = np.einsum("nfhwij,fcij->nchw", gwin, flipped, optimize=True)
        return gxp[:, :, 1:-1, 1:-1]


class Conv1x1:
    """Per-pixel linear map across channels."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32):
        limit = np.sqrt(6.0 / (in_channels + out_channels))
        self.W = rng.uniform(-limit, limit, size=(out_channels, in_channels)).astype(dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return np.einsum("nchw,fc->nfhw", x, self.W, optimize=True) + self.b[None, :, None, None]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.gb += grad.sum(axis=(0, 2, 3))
        self.gW += np.einsum("nfhw,nchw->fc", grad, self._x, optimize=True)
        return np.einsum("nfhw,fc->nchw", grad, self.W, optimize=True)


class ReLU:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._mask


class MaxPool2:
    """2x2 max pooling with stride 2; input sides must be even."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = blocks.reshape(n, c, h // 2, w // 2, 4)
        self._idx = flat.argmax(axis=4)
        self._shape = (n, c, h, w)
        return np.take_along_axis(flat, self._idx[..., None], axis=4)[..., 0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n, c, h, w = self._shape
        flat = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(flat, self._idx[..., None], grad[..., None], axis=4)
        return flat.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class UpsampleNearest2:
    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n, c, h, w = grad.shape
        return grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def weighted_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, class_weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean per-pixel weighted cross-entropy and its logit gradient.

    loss = mean over pixels of w[y] * (-log softmax(z)[y]). The mean is
    over the pixel count, so all-zero weights give a zero loss and a
    zero gradient.
    """
    n, k, h, w = logits.shape
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    onehot_idx = labels[:, None, :, :]
    nll = -np.take_along_axis(logp, onehot_idx, axis=1)[:, 0]
    wmap = class_weights.astype(logits.dtype)[labels]
    npix = n * h * w
    loss = float((wmap * nll).sum() / npix)
    grad = np.exp(logp)
    idx_n = np.arange(n)[:, None, None]
    idx_h = np.arange(h)[None, :, None]
    idx_w = np.arange(w)[None, None, :]
    grad[idx_n, labels, idx_h, idx_w] -= 1.0
    grad *= (wmap / npix)[:, None, :, :]
    return loss, grad.astype(logits.dtype, copy=False)
