"""Desk-scale learning tasks with flat parameter vectors and analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _softmax_xent(logits: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(y))
    loss = -float(np.dot(w, logp[rows, y]))
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    return loss, dlogits * w[:, None]


def _weights(n: int, sample_weights: np.ndarray | None) -> np.ndarray:
    if sample_weights is None:
        return np.full(n, 1.0 / n)
    return sample_weights


@dataclass(frozen=True)
class SoftmaxRegression:
    """Multinomial logistic regression; parameters are ``[W.ravel(), b]``."""

    n_features: int
    n_classes: int
    l2: float = 0.0

    @property
    def dim(self) -> int:
        return (self.n_features + 1) * self.n_classes

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def _unpack(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.n_classes
        return params[:-k].reshape(self.n_features, k), params[-k:]

    def loss_grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray,
                  sample_weights: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        W, b = self._unpack(params)
        w = _weights(len(y), sample_weights)
        loss, dlogits = _softmax_xent(X @ W + b, y, w)
        gW = X.T @ dlogits
        gb = dlogits.sum(axis=0)
        if self.l2:
            loss += 0.5 * self.l2 * float(W.ravel() @ W.ravel())
            gW = gW + self.l2 * W
        return loss, np.concatenate([gW.ravel(), gb])

    def predict(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        W, b = self._unpack(params)
        return np.argmax(X @ W + b, axis=1)


@dataclass(frozen=True)
class MLP:
    """One hidden tanh layer followed by softmax."""

    n_features: int
    n_hidden: int
    n_classes: int

    def __post_init__(self) -> None:
        if not 1 <= self.n_hidden <= 64:
            raise ValueError("n_hidden must be in [1, 64]")

    @property
    def dim(self) -> int:
        d, h, k = self.n_features, self.n_hidden, self.n_classes
        return d * h + h + h * k + k

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        d, h, k = self.n_features, self.n_hidden, self.n_classes
        w1 = rng.normal(0, 1 / np.sqrt(d), size=d * h)
        w2 = rng.normal(0, 1 / np.sqrt(h), size=h * k)
        return np.concatenate([w1, np.zeros(h), w2, np.zeros(k)])

    def _unpack(self, p: np.ndarray):
        d, h, k = self.n_features, self.n_hidden, self.n_classes
        i = 0
        W1 = p[i:i + d * h].reshape(d, h); i += d * h
        b1 = p[i:i + h]; i += h
        W2 = p[i:i + h * k].reshape(h, k); i += h * k
        return W1, b1, W2, p[i:i + k]

    def loss_grad(self, params, X, y, sample_weights=None):
        W1, b1, W2, b2 = self._unpack(params)
        w = _weights(len(y), sample_weights)
        hidden = np.tanh(X @ W1 + b1)
        loss, dlogits = _softmax_xent(hidden @ W2 + b2, y, w)
        dhidden = (dlogits @ W2.T) * (1 - hidden**2)
        grad = np.concatenate([
            (X.T @ dhidden).ravel(), dhidden.sum(axis=0),
            (hidden.T @ dlogits).ravel(), dlogits.sum(axis=0),
        ])
        return loss, grad

    def predict(self, params, X):
        W1, b1, W2, b2 = self._unpack(params)
        return np.argmax(np.tanh(X @ W1 + b1) @ W2 + b2, axis=1)


@dataclass(frozen=True)
class QuadraticTask:
    """``F(x) = mean_i ||x - X_i||^2``; labels are ignored. Used as a test oracle."""

    n_features: int

    @property
    def dim(self) -> int:
        return self.n_features

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.n_features)

    def loss_grad(self, params, X, y, sample_weights=None):
        w = _weights(len(X), sample_weights)
        diff = params[None, :] - X
        loss = float(w @ np.einsum("ij,ij->i", diff, diff))
        return loss, 2.0 * (w @ diff)

    def predict(self, params, X):
        return np.zeros(len(X), dtype=int)


def make_task(kind: str, n_features: int, n_classes: int, hidden: int = 32, l2: float = 0.0):
    if kind == "logistic":
        return SoftmaxRegression(n_features, n_classes, l2)
    if kind == "mlp":
        return MLP(n_features, hidden, n_classes)
    if kind == "quadratic":
        return QuadraticTask(n_features)
    raise ValueError(f"unknown task kind {kind!r}")
