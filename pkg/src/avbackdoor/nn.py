"""Minimal conv-net building blocks with explicit backward passes.

Everything is plain numpy so runs are bit-reproducible for a fixed seed;
the layers cache what their backward pass needs, and gradients for the
parameters land in ``.gw`` / ``.gb``.
"""

from __future__ import annotations

import numpy as np


class Conv2d:
    """3x3 (by default) valid convolution with stride, NCHW layout.

    Forward/backward run as one im2col GEMM each; the unfolded patch matrix
    is cached for the weight gradient.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 ksize: int = 3, stride: int = 2, dtype=np.float32):
        self.c_in, self.c_out, self.ksize, self.stride = c_in, c_out, ksize, stride
        scale = np.sqrt(2.0 / (c_in * ksize * ksize))
        self.w = (rng.standard_normal((c_out, c_in, ksize, ksize)) * scale
                  ).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cols: np.ndarray | None = None
        self._xshape: tuple[int, ...] | None = None

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s = self.ksize, self.stride
        return (h - k) // s + 1, (w - k) // s + 1

    def _im2col(self, x: np.ndarray) -> np.ndarray:
        k, s = self.ksize, self.stride
        windows = np.lib.stride_tricks.sliding_window_view(x, (k, k),
                                                           axis=(2, 3))
        windows = windows[:, :, ::s, ::s]  # (N, C, OH, OW, k, k)
        n, c, oh, ow = windows.shape[:4]
        cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
        return cols.reshape(n * oh * ow, c * k * k)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, _, h, w = x.shape
        oh, ow = self.out_hw(h, w)
        cols = self._im2col(x)
        wmat = self.w.reshape(self.c_out, -1)
        out = cols @ wmat.T + self.b
        if train:
            self._cols = cols
            self._xshape = x.shape
        return out.reshape(n, oh, ow, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._cols is not None, "backward before forward(train=True)"
        n, _, oh, ow = grad.shape
        k, s = self.ksize, self.stride
        g2 = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(
            n * oh * ow, self.c_out)
        self.gw += (g2.T @ self._cols).reshape(self.w.shape)
        self.gb += g2.sum(axis=0)
        dcols = (g2 @ self.w.reshape(self.c_out, -1)).reshape(
            n, oh, ow, self.c_in, k, k)
        gx = np.zeros(self._xshape, dtype=grad.dtype)
        for ki in range(k):
            for kj in range(k):
                gx[:, :, ki : ki + s * (oh - 1) + 1 : s,
                   kj : kj + s * (ow - 1) + 1 : s] += dcols[:, :, :, :, ki, kj
                                                            ].transpose(0, 3, 1, 2)
        self._cols = None
        self._xshape = None
        return gx

    def zero_grad(self) -> None:
        self.gw[...] = 0
        self.gb[...] = 0


class Linear:
    """Dense layer y = x @ w.T + b."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 init_scale: float | None = None, dtype=np.float32):
        if init_scale is None:
            init_scale = 1.0 / np.sqrt(d_in)
        self.w = (rng.standard_normal((d_out, d_in)) * init_scale).astype(dtype)
        self.b = np.zeros(d_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._x is not None, "backward before forward(train=True)"
        self.gw += grad.T @ self._x
        self.gb += grad.sum(axis=0)
        gx = grad @ self.w
        self._x = None
        return gx

    def zero_grad(self) -> None:
        self.gw[...] = 0
        self.gb[...] = 0


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray,
                          labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE over the batch and the gradient w.r.t. the logits."""
    probs = softmax(logits.astype(np.float64))
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) along the last axis."""
    p = np.clip(probs, 1e-12, 1.0)
    return -(p * np.log(p)).sum(axis=-1)
