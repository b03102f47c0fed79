"""Gaussian naive Bayes for multiclass tabular data."""

from __future__ import annotations

import numpy as np


class GaussianNBModel:
    """Per-class feature means/variances with a variance floor.

    The floor is 1e-9 times the largest overall feature variance, which keeps
    constant features (image borders, say) from collapsing the likelihood.
    """

    kind = "gnb"

    def __init__(self, seed=0):
        self.seed = seed
        self.class_count = None
        self.feature_count = None
        self.theta = None
        self.var = None
        self.priors = None

    def fit(self, X, y, class_count):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, d = X.shape
        self.class_count = class_count
        self.feature_count = d
        self.theta = np.zeros((class_count, d))
        self.var = np.ones((class_count, d))
        self.priors = np.zeros(class_count)
        floor = 1e-9 * float(X.var(axis=0).max())
        if floor == 0.0:
            floor = 1e-9
        for c in range(class_count):
            rows = X[y == c]
            if rows.shape[0] == 0:
                continue
            self.theta[c] = rows.mean(axis=0)
            self.var[c] = np.maximum(rows.var(axis=0), floor)
            self.priors[c] = rows.shape[0] / n
        return self

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ValueError(
                f"expected (n, {self.feature_count}) feature matrix, got shape {X.shape}"
            )
        return X

    def predict_proba(self, X):
        X = self._check(X)
        log_post = np.full((X.shape[0], self.class_count), -np.inf)
        for c in range(self.class_count):
            if self.priors[c] == 0.0:
                continue
            diff = X - self.theta[c]
            log_like = (
                -0.5 * np.log(2.0 * np.pi * self.var[c]) - diff * diff / (2.0 * self.var[c])
            ).sum(axis=1)
            log_post[:, c] = np.log(self.priors[c]) + log_like
        shift = log_post.max(axis=1, keepdims=True)
        p = np.exp(log_post - shift)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def hyperparams(self):
        return {}

    def params_to_json(self):
        return {
            "class_count": self.class_count,
            "feature_count": self.feature_count,
            "theta": self.theta.tolist(),
            "var": self.var.tolist(),
            "priors": self.priors.tolist(),
        }

    @classmethod
    def from_params(cls, hyperparams, params, seed):
        model = cls(seed=seed, **hyperparams)
        model.class_count = int(params["class_count"])
        model.feature_count = int(params["feature_count"])
        model.theta = np.asarray(params["theta"], dtype=np.float64)
        model.var = np.asarray(params["var"], dtype=np.float64)
        model.priors = np.asarray(params["priors"], dtype=np.float64)
        return model
