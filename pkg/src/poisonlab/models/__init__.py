"""Four multiclass learners behind one contract: fit, predict, probabilities, importance."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..data import Dataset
from .bayes import GaussianNBModel
from .mlp import MLPModel
from .tree import DecisionTreeModel, RandomForestModel, gini_impurity

MODEL_KINDS = ("dt", "rf", "gnb", "mlp")

MODEL_SCHEMA = "poisonlab.model/v1"

_MODEL_CLASSES = {
    "dt": DecisionTreeModel,
    "rf": RandomForestModel,
    "gnb": GaussianNBModel,
    "mlp": MLPModel,
}


def fit(kind: str, train: Dataset, hyperparams: dict | None = None, seed: int = 0):
    """Fit one of the four learners; deterministic given (kind, data, hyperparams, seed)."""
    kind = kind.lower()
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}, expected one of {MODEL_KINDS}")
    if np.unique(train.labels).size < 2:
        raise ValueError("training data must contain at least two classes")
    if train.n < 2:
        raise ValueError("training data must contain at least two rows")
    cls = _MODEL_CLASSES[kind]
    hp = dict(hyperparams or {})
    allowed = set(cls(seed=0).hyperparams())
    unknown = set(hp) - allowed
    if unknown:
        raise ValueError(f"unknown hyperparams for {kind}: {sorted(unknown)}")
    model = cls(seed=seed, **hp)
    model.fit(train.features, train.labels, train.class_count)
    return model


def predict(model, X) -> np.ndarray:
    """Predicted class ids: argmax of probabilities, ties to the smallest class id."""
    return model.predict(np.asarray(X, dtype=np.float64))


def predict_proba(model, X) -> np.ndarray:
    """(n, class_count) probability matrix; rows are non-negative and sum to 1."""
    return model.predict_proba(np.asarray(X, dtype=np.float64))


def feature_importance(
    model,
    reference: Dataset,
    seed: int = 0,
    n_repeats: int = 5,
    max_rows: int | None = None,
) -> np.ndarray:
    """Per-feature influence scores: non-negative, summing to 1 (or all zero).

    Tree models report the normalized total Gini-impurity decrease collected
    at fit time; the reference set is ignored. Other models use permutation
    importance on ``reference``: the mean accuracy drop over ``n_repeats``
    seeded column shuffles, negative drops clamped to 0, then normalized.
    ``max_rows`` caps the evaluated rows (seeded subsample) to bound the cost
    on wide data; by default every reference row is used.
    """
    if reference.d != model.feature_count:
        raise ValueError(
            f"reference has {reference.d} features, model expects {model.feature_count}"
        )
    if model.kind in ("dt", "rf"):
        raw = np.asarray(model.importance_raw, dtype=np.float64)
        total = raw.sum()
        return raw / total if total > 0 else raw.copy()

    rng = np.random.default_rng(seed)
    X = reference.features
    y = reference.labels
    if max_rows is not None and reference.n > max_rows:
        rows = rng.choice(reference.n, size=max_rows, replace=False)
        rows.sort()
        X = X[rows]
        y = y[rows]
    base = float((model.predict(X) == y).mean())
    drops = np.zeros(reference.d)
    work = X.copy()
    for _ in range(n_repeats):
        perm = rng.permutation(X.shape[0])
        for j in range(reference.d):
            saved = work[:, j].copy()
            work[:, j] = X[perm, j]
            drops[j] += base - float((model.predict(work) == y).mean())
            work[:, j] = saved
    drops /= n_repeats
    np.maximum(drops, 0.0, out=drops)
    total = drops.sum()
    return drops / total if total > 0 else drops


def model_to_json(model) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "kind": model.kind,
        "seed": model.seed,
        "hyperparams": model.hyperparams(),
        "parameters": model.params_to_json(),
    }


def model_from_json(doc: dict):
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unexpected model schema {doc.get('schema')!r}")
    kind = doc["kind"]
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    cls = _MODEL_CLASSES[kind]
    return cls.from_params(doc["hyperparams"], doc["parameters"], int(doc["seed"]))


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)), encoding="utf-8")


def load_model(path):
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
