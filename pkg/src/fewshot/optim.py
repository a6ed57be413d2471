"""Parameter update rules: bias-corrected Adam (default) and plain SGD."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


class Adam:
    """Adam with bias correction. Reads gradients from each parameter's
    `.grad`; a missing gradient is an error (call zero_grad first)."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = _take_grad(p)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


class SGD:
    """Plain gradient descent, optional momentum."""

    def __init__(self, params, lr=1e-2, momentum=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.step_count = 0
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        for i, p in enumerate(self.params):
            g = _take_grad(p)
            if self.momentum:
                self.velocity[i] = self.momentum * self.velocity[i] + g
                g = self.velocity[i]
            p.data -= (self.lr * g).astype(p.data.dtype)


def _take_grad(p: Tensor) -> np.ndarray:
    if p.grad is None:
        raise ShapeError("parameter has no gradient; run backward (and zero_grad) first")
    if p.grad.shape != p.data.shape:
        raise ShapeError(f"gradient shape {p.grad.shape} does not match parameter shape {p.data.shape}")
    return p.grad
