"""Two-hidden-layer ReLU perceptron trained by mini-batch gradient descent."""
from __future__ import annotations

import numpy as np

from ..errors import Divergence, InvalidHyperparameter


def glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def forward(params, X):
    W1, b1, W2, b2, W3, b3 = params
    z1 = X @ W1 + b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ W2 + b2
    h2 = np.maximum(z2, 0.0)
    out = h2 @ W3 + b3
    return out[:, 0], (z1, h1, z2, h2)


def loss_and_grad(params, X, y):
    """Mean squared error and its gradient with respect to every parameter."""
    W1, b1, W2, b2, W3, b3 = params
    pred, (z1, h1, z2, h2) = forward(params, X)
    n = len(y)
    err = pred - y
    loss = float(err @ err / n)
    d_out = (2.0 / n) * err[:, None]
    gW3 = h2.T @ d_out
    gb3 = d_out.sum(axis=0)
    d2 = (d_out @ W3.T) * (z2 > 0)
    gW2 = h1.T @ d2
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ W2.T) * (z1 > 0)
    gW1 = X.T @ d1
    gb1 = d1.sum(axis=0)
    return loss, [gW1, gb1, gW2, gb2, gW3, gb3]


class MLP:
    def __init__(self, nodes=32, epochs=500, step=1e-3, batch_size=32, seed=0):
        self.nodes = nodes
        self.epochs = epochs
        self.step = step
        self.batch_size = batch_size
        self.seed = seed

    def _layers(self):
        nodes = self.nodes
        if isinstance(nodes, (int, np.integer)):
            nodes = (int(nodes), int(nodes))
        nodes = tuple(int(k) for k in nodes)
        if len(nodes) != 2 or min(nodes) < 1:
            raise InvalidHyperparameter(f"nodes must give two positive layer widths, got {self.nodes}")
        if not self.step > 0 or int(self.epochs) < 0 or int(self.batch_size) < 1:
            raise InvalidHyperparameter("step > 0, epochs >= 0 and batch_size >= 1 are required")
        return nodes

    def init_params(self, p, y_mean=0.0):
        h1, h2 = self._layers()
        rng = np.random.default_rng(int(self.seed))
        return [
            glorot(rng, p, h1), np.zeros(h1),
            glorot(rng, h1, h2), np.zeros(h2),
            glorot(rng, h2, 1), np.array([y_mean]),
        ]

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.mean_ = X.mean(axis=0)
        self.sd_ = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        Xs = (X - self.mean_) / self.sd_
        params = self.init_params(X.shape[1], float(y.mean()))
        rng = np.random.default_rng(int(self.seed) + 1)
        n = len(y)
        history = [loss_and_grad(params, Xs, y)[0]]
        # overflow is caught below as a non-finite loss and raised as Divergence
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(int(self.epochs)):
                order = rng.permutation(n)
                for s in range(0, n, int(self.batch_size)):
                    b = order[s:s + int(self.batch_size)]
                    _, grads = loss_and_grad(params, Xs[b], y[b])
                    for prm, g in zip(params, grads):
                        prm -= self.step * g
                loss = loss_and_grad(params, Xs, y)[0]
                if not np.isfinite(loss):
                    raise Divergence(f"training loss became {loss} at epoch {epoch + 1} (step {self.step})")
                history.append(loss)
        self.params_ = params
        self.loss_history_ = history
        return self

    def predict(self, X):
        Xs = (np.asarray(X, dtype=float) - self.mean_) / self.sd_
        return forward(self.params_, Xs)[0]
