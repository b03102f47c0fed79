"""CART decision tree and bagged random forest, Gini impurity throughout."""

from __future__ import annotations

import math

import numpy as np

_FEATURE_CHUNK = 64


def gini_impurity(counts: np.ndarray) -> float:
    """1 - sum p^2 for a class-count vector; 0 for an empty or pure node."""
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - (p * p).sum())


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "proba")

    def __init__(self, feature=None, threshold=None, left=None, right=None, proba=None):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.proba = proba

    @property
    def is_leaf(self):
        return self.feature is None

    def to_json(self):
        if self.is_leaf:
            return {"p": self.proba.tolist()}
        return {
            "f": self.feature,
            "t": self.threshold,
            "l": self.left.to_json(),
            "r": self.right.to_json(),
        }

    @classmethod
    def from_json(cls, doc):
        if "p" in doc:
            return cls(proba=np.asarray(doc["p"], dtype=np.float64))
        return cls(
            feature=int(doc["f"]),
            threshold=float(doc["t"]),
            left=cls.from_json(doc["l"]),
            right=cls.from_json(doc["r"]),
        )


def _best_split(X, y, idx, feats, class_count):
    """Best (feature, threshold) by weighted child Gini, or None.

    Candidate thresholds are midpoints between adjacent distinct sorted
    values. Minimizing weighted child Gini is equivalent to maximizing
    sum(left_counts^2)/n_left + sum(right_counts^2)/n_right, which is what
    the cumulative-count scan below computes for every cut of every
    candidate feature at once. Ties resolve to the smallest feature index,
    then the smallest threshold, so a refit is bit-stable.
    """
    n = idx.size
    ycol = y[idx]
    total = np.bincount(ycol, minlength=class_count).astype(np.float64)
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    best_obj = -np.inf
    best = None
    for c0 in range(0, len(feats), _FEATURE_CHUNK):
        chunk = feats[c0 : c0 + _FEATURE_CHUNK]
        Xn = X[np.ix_(idx, chunk)]
        order = np.argsort(Xn, axis=0, kind="stable")
        Xs = np.take_along_axis(Xn, order, axis=0)
        ys = ycol[order]
        onehot = ys[:, :, None] == np.arange(class_count)
        left = np.cumsum(onehot, axis=0, dtype=np.float64)[:-1]
        right = total[None, None, :] - left
        obj = (left * left).sum(axis=2) / nl + (right * right).sum(axis=2) / nr
        obj[Xs[1:] <= Xs[:-1]] = -np.inf
        col_pos = np.argmax(obj, axis=0)
        col_val = obj[col_pos, np.arange(obj.shape[1])]
        for f_local in range(obj.shape[1]):
            v = col_val[f_local]
            if np.isfinite(v) and v > best_obj:
                pos = int(col_pos[f_local])
                a = float(Xs[pos, f_local])
                b = float(Xs[pos + 1, f_local])
                thr = a + (b - a) / 2.0
                if thr >= b:  # midpoint collapsed onto b; split is x <= thr
                    thr = a
                best_obj = v
                best = (int(chunk[f_local]), thr)
    return best


class DecisionTreeModel:
    """CART classifier; leaf probabilities are the training class proportions."""

    kind = "dt"

    def __init__(self, max_depth=16, min_samples_split=2, seed=0):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.seed = seed
        self.class_count = None
        self.feature_count = None
        self.importance_raw = None
        self._root = None
        # set by RandomForestModel for per-split feature subsampling
        self._feature_rng = None
        self._max_features = None

    def fit(self, X, y, class_count):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.class_count = class_count
        self.feature_count = X.shape[1]
        self.importance_raw = np.zeros(X.shape[1])
        self._all_features = np.arange(X.shape[1])
        self._root = self._grow(X, y, np.arange(X.shape[0]), depth=0)
        return self

    def _candidate_features(self):
        if self._feature_rng is None:
            return self._all_features
        cand = self._feature_rng.choice(
            self.feature_count, size=self._max_features, replace=False
        )
        cand.sort()
        return cand

    def _grow(self, X, y, idx, depth):
        counts = np.bincount(y[idx], minlength=self.class_count).astype(np.float64)
        node_gini = gini_impurity(counts)
        if (
            depth >= self.max_depth
            or idx.size < self.min_samples_split
            or node_gini == 0.0
        ):
            return _Node(proba=counts / idx.size)
        best = _best_split(X, y, idx, self._candidate_features(), self.class_count)
        if best is None:
            return _Node(proba=counts / idx.size)
        feature, threshold = best
        mask = X[idx, feature] <= threshold
        left_idx = idx[mask]
        right_idx = idx[~mask]
        if left_idx.size == 0 or right_idx.size == 0:
            return _Node(proba=counts / idx.size)
        left_counts = np.bincount(y[left_idx], minlength=self.class_count).astype(float)
        right_counts = np.bincount(y[right_idx], minlength=self.class_count).astype(float)
        self.importance_raw[feature] += (
            idx.size * node_gini
            - left_idx.size * gini_impurity(left_counts)
            - right_idx.size * gini_impurity(right_counts)
        )
        return _Node(
            feature=feature,
            threshold=threshold,
            left=self._grow(X, y, left_idx, depth + 1),
            right=self._grow(X, y, right_idx, depth + 1),
        )

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ValueError(
                f"expected (n, {self.feature_count}) feature matrix, got shape {X.shape}"
            )
        return X

    def predict_proba(self, X):
        X = self._check(X)
        out = np.empty((X.shape[0], self.class_count))
        self._apply(self._root, X, np.arange(X.shape[0]), out)
        return out

    def _apply(self, node, X, idx, out):
        if node.is_leaf:
            out[idx] = node.proba
            return
        mask = X[idx, node.feature] <= node.threshold
        left_idx = idx[mask]
        right_idx = idx[~mask]
        if left_idx.size:
            self._apply(node.left, X, left_idx, out)
        if right_idx.size:
            self._apply(node.right, X, right_idx, out)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def hyperparams(self):
        return {"max_depth": self.max_depth, "min_samples_split": self.min_samples_split}

    def params_to_json(self):
        return {
            "class_count": self.class_count,
            "feature_count": self.feature_count,
            "importance_raw": self.importance_raw.tolist(),
            "tree": self._root.to_json(),
        }

    @classmethod
    def from_params(cls, hyperparams, params, seed):
        model = cls(seed=seed, **hyperparams)
        model.class_count = int(params["class_count"])
        model.feature_count = int(params["feature_count"])
        model.importance_raw = np.asarray(params["importance_raw"], dtype=np.float64)
        model._root = _Node.from_json(params["tree"])
        return model


class RandomForestModel:
    """Bagged CART trees with sqrt(d) feature candidates per split, seed-stable.

    Per-tree RNG streams are spawned from the model seed, so results do not
    depend on fitting order or scheduling.
    """

    kind = "rf"

    def __init__(
        self, n_trees=100, max_depth=16, min_samples_split=2, max_features="sqrt", seed=0
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.seed = seed
        self.class_count = None
        self.feature_count = None
        self.trees = []

    def _resolve_max_features(self, d):
        if self.max_features == "sqrt":
            return max(1, int(math.isqrt(d)))
        mf = int(self.max_features)
        if not 1 <= mf <= d:
            raise ValueError(f"max_features must be in [1, {d}], got {mf}")
        return mf

    def fit(self, X, y, class_count):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.class_count = class_count
        self.feature_count = X.shape[1]
        mf = self._resolve_max_features(X.shape[1])
        self.trees = []
        for child_seq in np.random.SeedSequence(self.seed).spawn(self.n_trees):
            rng = np.random.default_rng(child_seq)
            bootstrap = rng.integers(0, X.shape[0], X.shape[0])
            tree = DecisionTreeModel(
                max_depth=self.max_depth,
                min_samples_split=self.min_samples_split,
                seed=self.seed,
            )
            tree._feature_rng = rng
            tree._max_features = mf
            tree.fit(X[bootstrap], y[bootstrap], class_count)
            self.trees.append(tree)
        return self

    @property
    def importance_raw(self):
        total = np.zeros(self.feature_count)
        for tree in self.trees:
            total += tree.importance_raw
        return total

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ValueError(
                f"expected (n, {self.feature_count}) feature matrix, got shape {X.shape}"
            )
        acc = np.zeros((X.shape[0], self.class_count))
        for tree in self.trees:
            acc += tree.predict_proba(X)
        return acc / len(self.trees)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def hyperparams(self):
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "max_features": self.max_features,
        }

    def params_to_json(self):
        return {
            "class_count": self.class_count,
            "feature_count": self.feature_count,
            "trees": [
                {"tree": t._root.to_json(), "importance_raw": t.importance_raw.tolist()}
                for t in self.trees
            ],
        }

    @classmethod
    def from_params(cls, hyperparams, params, seed):
        model = cls(seed=seed, **hyperparams)
        model.class_count = int(params["class_count"])
        model.feature_count = int(params["feature_count"])
        model.trees = []
        for entry in params["trees"]:
            tree = DecisionTreeModel(
                max_depth=model.max_depth,
                min_samples_split=model.min_samples_split,
                seed=seed,
            )
            tree.class_count = model.class_count
            tree.feature_count = model.feature_count
            tree.importance_raw = np.asarray(entry["importance_raw"], dtype=np.float64)
            tree._root = _Node.from_json(entry["tree"])
            model.trees.append(tree)
        return model
