"""Plain-numpy multilayer perceptron scoring caching decisions.

ReLU hidden layers, sigmoid output head (scores live in (0,1) per service),
squared-error loss against binary target decisions, classical momentum SGD.
Everything is explicit arrays so gradients can be checked against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable two-sided form
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]  # (fan_out,) per layer

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def arrays(self):
        """All parameter arrays, weights then biases layer by layer."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def init_mlp(dims, rng) -> MlpParams:
    """He-normal weights (std sqrt(2/fan_in)), zero biases."""
    dims = tuple(int(d) for d in dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _forward_cached(params: MlpParams, X: np.ndarray):
    """Activations per layer for backprop; input promoted to (N, d)."""
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts  # acts[-1] holds the logits


def forward(params: MlpParams, x: np.ndarray):
    """(logits, scores); accepts a single feature vector or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    logits = _forward_cached(params, np.atleast_2d(x))[-1]
    if single:
        logits = logits[0]
    return logits, _sigmoid(logits)


def mse_loss(params: MlpParams, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean over the batch of the squared decision-score distance."""
    _, scores = forward(params, X)
    return float(np.mean(np.sum((scores - np.atleast_2d(Y)) ** 2, axis=1)))


def loss_and_grads(params: MlpParams, X: np.ndarray, Y: np.ndarray):
    """Backprop of the batch MSE; returns (loss, gradient in MlpParams shape)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N = X.shape[0]
    acts = _forward_cached(params, X)
    scores = _sigmoid(acts[-1])
    loss = float(np.mean(np.sum((scores - Y) ** 2, axis=1)))

    grad = params.zeros_like()
    delta = 2.0 * (scores - Y) * scores * (1.0 - scores) / N  # through the sigmoid head
    for i in reversed(range(len(params.weights))):
        grad.weights[i] = acts[i].T @ delta
        grad.biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0.0)
    return loss, grad


def sgd_momentum_step(
    params: MlpParams, grad: MlpParams, velocity: MlpParams, lr: float, momentum: float
) -> None:
    """Classical momentum, in place: v <- m v + g; theta <- theta - lr v."""
    for p, g, v in zip(params.arrays(), grad.arrays(), velocity.arrays()):
        v *= momentum
        v += g
        p -= lr * v
