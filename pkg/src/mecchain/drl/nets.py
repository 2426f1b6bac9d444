"""Dense feed-forward networks with hand-written backpropagation.

Inputs are batches of shape ``(M, n_in)``. ``forward`` returns the output
and a cache; ``backward`` turns an upstream gradient into parameter gradients
plus the gradient with respect to the input, which the actor update needs to
chain through a critic.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np


class OutputActivation(str, enum.Enum):
    LINEAR = "LINEAR"
    UNIT_SIGMOID = "UNIT_SIGMOID"


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class DenseNet:
    def __init__(self, widths: Sequence[int], output: OutputActivation = OutputActivation.LINEAR,
                 rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        self.output = OutputActivation(output)
        rng = rng if rng is not None else np.random.default_rng()
        self.params: list[np.ndarray] = []
        for n_in, n_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(n_in)
            self.params.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.params.append(rng.uniform(-bound, bound, size=n_out))

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cache = [x]
        h = x
        for k in range(self.n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = h @ W + b
            if k < self.n_layers - 1:
                h = np.maximum(z, 0.0)
            elif self.output is OutputActivation.UNIT_SIGMOID:
                h = _sigmoid(z)
            else:
                h = z
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Backpropagate ``grad_out`` (same shape as the output).

        Returns ``(param_grads, grad_input)``; parameter gradients are summed
        over the batch, so scale ``grad_out`` for a mean loss.
        """
        grads: list[np.ndarray] = [None] * len(self.params)
        g = np.asarray(grad_out, dtype=float)
        for k in reversed(range(self.n_layers)):
            h_out, h_in = cache[k + 1], cache[k]
            if k < self.n_layers - 1:
                g = g * (h_out > 0.0)
            elif self.output is OutputActivation.UNIT_SIGMOID:
                g = g * h_out * (1.0 - h_out)
            W = self.params[2 * k]
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ W.T
        return grads, g

    def copy(self) -> "DenseNet":
        clone = DenseNet.__new__(DenseNet)
        clone.widths = self.widths
        clone.output = self.output
        clone.params = [p.copy() for p in self.params]
        return clone

    def load_params(self, params: Sequence[np.ndarray]) -> None:
        shapes = [p.shape for p in self.params]
        incoming = [np.shape(p) for p in params]
        if shapes != incoming:
            raise ValueError(f"parameter shapes {incoming} do not match {shapes}")
        self.params = [np.array(p, dtype=float) for p in params]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind: str, lr: float):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {kind!r}")
