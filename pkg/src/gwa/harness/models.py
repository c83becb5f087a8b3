"""Tiny classifiers and optimizers for the reference trainer.

Parameters live in float64 but are snapped to the float32 grid after every
update, so emitted telemetry captures the exact model state; forward math
runs in float64 over those grid values.
"""

from __future__ import annotations

import numpy as np

from ..trace import stable_softmax


def _quantize(arr: np.ndarray) -> None:
    arr[...] = arr.astype(np.float32).astype(np.float64)


class SoftmaxRegression:
    """Linear softmax classifier; the head is the whole model."""

    def __init__(self, dim: int, classes: int, rng: np.random.Generator):
        self.w = rng.standard_normal((classes, dim)) / np.sqrt(dim)
        self.b = np.zeros(classes)
        _quantize(self.w)
        self.params = [self.w, self.b]

    def latents(self, x: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(x, dtype=np.float32)

    @property
    def head_weights(self) -> np.ndarray:
        return self.w

    @property
    def head_bias(self) -> np.ndarray:
        return self.b

    def head_forward(self, latents_f32: np.ndarray) -> np.ndarray:
        logits = latents_f32.astype(np.float64) @ self.w.T + self.b
        return stable_softmax(logits)

    def backward(
        self, x: np.ndarray, latents_f32: np.ndarray, probs: np.ndarray, y: np.ndarray
    ) -> list[np.ndarray]:
        n = len(y)
        d = probs.copy()
        d[np.arange(n), y] -= 1.0
        d /= n
        return [d.T @ latents_f32.astype(np.float64), d.sum(axis=0)]


class Mlp:
    """One hidden layer; the post-activation hidden vector feeds the head."""

    def __init__(
        self,
        dim: int,
        classes: int,
        rng: np.random.Generator,
        hidden_dim: int = 64,
        activation: str = "relu",
    ):
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.activation = activation
        gain = np.sqrt(2.0) if activation == "relu" else 1.0
        self.w1 = rng.standard_normal((hidden_dim, dim)) * gain / np.sqrt(dim)
        self.b1 = np.zeros(hidden_dim)
        self.w2 = rng.standard_normal((classes, hidden_dim)) / np.sqrt(hidden_dim)
        self.b2 = np.zeros(classes)
        for p in (self.w1, self.w2):
            _quantize(p)
        self.params = [self.w1, self.b1, self.w2, self.b2]
        self._pre1: np.ndarray | None = None

    def _act(self, pre: np.ndarray) -> np.ndarray:
        return np.maximum(pre, 0.0) if self.activation == "relu" else np.tanh(pre)

    def latents(self, x: np.ndarray) -> np.ndarray:
        pre1 = x.astype(np.float64) @ self.w1.T + self.b1
        self._pre1 = pre1
        return self._act(pre1).astype(np.float32)

    @property
    def head_weights(self) -> np.ndarray:
        return self.w2

    @property
    def head_bias(self) -> np.ndarray:
        return self.b2

    def head_forward(self, latents_f32: np.ndarray) -> np.ndarray:
        logits = latents_f32.astype(np.float64) @ self.w2.T + self.b2
        return stable_softmax(logits)

    def backward(
        self, x: np.ndarray, latents_f32: np.ndarray, probs: np.ndarray, y: np.ndarray
    ) -> list[np.ndarray]:
        n = len(y)
        h = latents_f32.astype(np.float64)
        d2 = probs.copy()
        d2[np.arange(n), y] -= 1.0
        d2 /= n
        grad_w2 = d2.T @ h
        grad_b2 = d2.sum(axis=0)
        dh = d2 @ self.w2
        pre1 = self._pre1
        if self.activation == "relu":
            dpre = dh * (pre1 > 0)
        else:
            dpre = dh * (1.0 - np.tanh(pre1) ** 2)
        grad_w1 = dpre.T @ x.astype(np.float64)
        grad_b1 = dpre.sum(axis=0)
        return [grad_w1, grad_b1, grad_w2, grad_b2]


class Sgd:
    def __init__(
        self,
        params: list[np.ndarray],
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * v
            _quantize(p)


class Adam:
    """Adam with decoupled (AdamW-style) weight decay."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            _quantize(p)


def predict(model, x: np.ndarray, batch: int = 2048) -> np.ndarray:
    """Argmax class predictions, evaluated in batches."""
    out = np.empty(len(x), dtype=np.int64)
    for lo in range(0, len(x), batch):
        hi = min(lo + batch, len(x))
        probs = model.head_forward(model.latents(x[lo:hi]))
        out[lo:hi] = probs.argmax(axis=1)
    return out


def accuracy(model, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(model, x) == y))
