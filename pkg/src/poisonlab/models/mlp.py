"""Single-hidden-layer perceptron: ReLU, softmax output, mini-batch gradient descent."""

from __future__ import annotations

import numpy as np


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class MLPModel:
    """From-scratch MLP trained with plain mini-batch gradient descent.

    hidden_units/epochs default by data width: 64 units and 200 epochs for
    tabular data (d < 256), 128 units and 30 epochs for image-scale data.
    Weights start uniform in [-1, 1] scaled by 1/sqrt(fan_in); biases at 0.
    No adaptive optimizer, so determinism is just the seeded RNG stream.
    """

    kind = "mlp"

    def __init__(
        self, hidden_units=None, epochs=None, learning_rate=0.01, batch_size=32, seed=0
    ):
        self.hidden_units = hidden_units
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.class_count = None
        self.feature_count = None
        self.W1 = self.b1 = self.W2 = self.b2 = None

    def _resolve(self, d):
        hidden = self.hidden_units if self.hidden_units else (128 if d >= 256 else 64)
        epochs = self.epochs if self.epochs else (30 if d >= 256 else 200)
        return hidden, epochs

    def init_weights(self, d, class_count, rng):
        hidden, _ = self._resolve(d)
        self.W1 = rng.uniform(-1.0, 1.0, (d, hidden)) / np.sqrt(d)
        self.b1 = np.zeros(hidden)
        self.W2 = rng.uniform(-1.0, 1.0, (hidden, class_count)) / np.sqrt(hidden)
        self.b2 = np.zeros(class_count)
        self.feature_count = d
        self.class_count = class_count

    def fit(self, X, y, class_count):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, d = X.shape
        _, epochs = self._resolve(d)
        rng = np.random.default_rng(self.seed)
        self.init_weights(d, class_count, rng)
        lr = self.learning_rate
        for epoch in range(epochs):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = perm[start : start + self.batch_size]
                loss, grads = self.loss_and_gradients(X[batch], y[batch])
                if not np.isfinite(loss):
                    raise ValueError(f"non-finite training loss at epoch {epoch}")
                self.W1 -= lr * grads["W1"]
                self.b1 -= lr * grads["b1"]
                self.W2 -= lr * grads["W2"]
                self.b2 -= lr * grads["b2"]
        return self

    def _forward(self, X):
        z1 = X @ self.W1 + self.b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.W2 + self.b2
        return z1, a1, z2

    def loss_and_gradients(self, X, y):
        """Mean softmax cross-entropy and its exact parameter gradients."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = X.shape[0]
        z1, a1, z2 = self._forward(X)
        # log-softmax keeps the loss finite for large logits
        shifted = z2 - z2.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        loss = float((log_norm - shifted[np.arange(n), y]).mean())
        p = _softmax(z2)
        p[np.arange(n), y] -= 1.0
        g2 = p / n
        grads = {
            "W2": a1.T @ g2,
            "b2": g2.sum(axis=0),
        }
        g1 = (g2 @ self.W2.T) * (z1 > 0.0)
        grads["W1"] = X.T @ g1
        grads["b1"] = g1.sum(axis=0)
        return loss, grads

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ValueError(
                f"expected (n, {self.feature_count}) feature matrix, got shape {X.shape}"
            )
        return X

    def predict_proba(self, X):
        X = self._check(X)
        _, _, z2 = self._forward(X)
        return _softmax(z2)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def hyperparams(self):
        return {
            "hidden_units": self.hidden_units,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
        }

    def params_to_json(self):
        return {
            "class_count": self.class_count,
            "feature_count": self.feature_count,
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_params(cls, hyperparams, params, seed):
        model = cls(seed=seed, **hyperparams)
        model.class_count = int(params["class_count"])
        model.feature_count = int(params["feature_count"])
        model.W1 = np.asarray(params["W1"], dtype=np.float64)
        model.b1 = np.asarray(params["b1"], dtype=np.float64)
        model.W2 = np.asarray(params["W2"], dtype=np.float64)
        model.b2 = np.asarray(params["b2"], dtype=np.float64)
        return model
