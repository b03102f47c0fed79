"""Two-stage training-set sanitizer: neighbor-vote relabeling, then z-score removal.

Stage 1 recomputes every label from its k nearest neighbors' votes
(snapshot semantics: all confidences are computed against the input labels
and applied at once). Stage 2 drops rows whose per-feature |z| exceeds the
deviation limit, in a single pass. Only labels change and rows disappear;
feature values are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

OUTCOME_SCHEMA = "poisonlab.sanitization/v1"

DISTANCE_METRICS = ("euclidean", "manhattan")

# cap scratch distance blocks at ~32 MB of float64
_BLOCK_BUDGET = 4_000_000


@dataclass(frozen=True)
class SanitizerConfig:
    k: int = 7
    gamma: float = 0.40
    g: float = 3.0
    distance: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.g <= 0.0:
            raise ValueError(f"g must be > 0, got {self.g}")
        if self.distance not in DISTANCE_METRICS:
            raise ValueError(f"distance must be one of {DISTANCE_METRICS}")

    def to_json(self) -> dict:
        return {"k": self.k, "gamma": self.gamma, "g": self.g, "distance": self.distance}

    @classmethod
    def from_json(cls, doc: dict) -> "SanitizerConfig":
        return cls(**doc)


@dataclass(frozen=True)
class RelabelEntry:
    index: int
    old_label: int
    new_label: int
    confidence: float


@dataclass(frozen=True)
class RemovalEntry:
    index: int
    max_abs_z: float


@dataclass
class SanitizationOutcome:
    # sanitized is None when an outcome is rehydrated from its audit logs
    sanitized: Dataset | None
    relabeled: list[RelabelEntry] = field(default_factory=list)
    removed: list[RemovalEntry] = field(default_factory=list)
    config: SanitizerConfig = field(default_factory=SanitizerConfig)

    def to_json(self) -> dict:
        return {
            "schema": OUTCOME_SCHEMA,
            "config": self.config.to_json(),
            "relabeled": [
                {
                    "index": e.index,
                    "old_label": e.old_label,
                    "new_label": e.new_label,
                    "confidence": e.confidence,
                }
                for e in self.relabeled
            ],
            "removed": [
                {"index": e.index, "max_abs_z": e.max_abs_z} for e in self.removed
            ],
        }

    @classmethod
    def logs_from_json(cls, doc: dict) -> tuple[list[RelabelEntry], list[RemovalEntry]]:
        """Rehydrate the audit logs (the sanitized dataset itself is not serialized)."""
        if doc.get("schema") != OUTCOME_SCHEMA:
            raise ValueError(f"unexpected sanitization schema {doc.get('schema')!r}")
        relabeled = [
            RelabelEntry(
                int(e["index"]), int(e["old_label"]), int(e["new_label"]), float(e["confidence"])
            )
            for e in doc["relabeled"]
        ]
        removed = [RemovalEntry(int(e["index"]), float(e["max_abs_z"])) for e in doc["removed"]]
        return relabeled, removed


def _distance_block(A: np.ndarray, B: np.ndarray, metric: str) -> np.ndarray:
    """Pairwise distances between row blocks (squared Euclidean, monotone in the metric)."""
    if metric == "euclidean":
        sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
        np.maximum(sq, 0.0, out=sq)
        return sq
    out = np.empty((A.shape[0], B.shape[0]))
    for r in range(A.shape[0]):
        out[r] = np.abs(B - A[r]).sum(axis=1)
    return out


def _k_nearest(dist_row: np.ndarray, self_index: int, k: int) -> np.ndarray:
    """Indices of the k nearest rows, self excluded, distance ties by ascending index."""
    d = dist_row.copy()
    d[self_index] = np.inf
    kth = np.partition(d, k - 1)[k - 1]
    cand = np.flatnonzero(d <= kth)
    order = np.lexsort((cand, d[cand]))
    return cand[order[:k]]


def _neighbor_votes(
    features: np.ndarray, labels: np.ndarray, class_count: int, cfg: SanitizerConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Modal neighbor label and its vote fraction for every row, against snapshot labels."""
    n = features.shape[0]
    modal = np.empty(n, dtype=np.int64)
    conf = np.empty(n, dtype=np.float64)
    block = max(1, min(n, _BLOCK_BUDGET // n))
    for start in range(0, n, block):
        stop = min(start + block, n)
        dists = _distance_block(features[start:stop], features, cfg.distance)
        for r in range(stop - start):
            i = start + r
            nn = _k_nearest(dists[r], i, cfg.k)
            votes = np.bincount(labels[nn], minlength=class_count)
            m = int(votes.argmax())  # ties resolve to the smallest class id
            modal[i] = m
            conf[i] = votes[m] / cfg.k
    return modal, conf


def knn_confidence(
    i: int, ds: Dataset, cfg: SanitizerConfig | None = None
) -> tuple[int, float]:
    """Majority label among row i's k nearest neighbors and its vote fraction."""
    cfg = cfg or SanitizerConfig()
    if ds.n <= cfg.k:
        raise ValueError(f"need n > k, got n={ds.n}, k={cfg.k}")
    if not 0 <= i < ds.n:
        raise ValueError(f"row index {i} out of range")
    dists = _distance_block(ds.features[i : i + 1], ds.features, cfg.distance)
    nn = _k_nearest(dists[0], i, cfg.k)
    votes = np.bincount(ds.labels[nn], minlength=ds.class_count)
    m = int(votes.argmax())
    return m, votes[m] / cfg.k


def relabel(
    ds: Dataset, cfg: SanitizerConfig | None = None
) -> tuple[Dataset, list[RelabelEntry]]:
    """Replace labels where the modal neighbor label wins at least gamma of the votes."""
    cfg = cfg or SanitizerConfig()
    if ds.n <= cfg.k:
        raise ValueError(f"need n > k, got n={ds.n}, k={cfg.k}")
    modal, conf = _neighbor_votes(ds.features, ds.labels, ds.class_count, cfg)
    change = (conf >= cfg.gamma) & (modal != ds.labels)
    entries = [
        RelabelEntry(int(i), int(ds.labels[i]), int(modal[i]), float(conf[i]))
        for i in np.flatnonzero(change)
    ]
    if not entries:
        return ds, []
    labels = ds.labels.copy()
    labels[change] = modal[change]
    return ds.with_labels(labels, provenance=f"{ds.provenance}|relabeled"), entries


def zscore_stats(ds: Dataset) -> np.ndarray:
    """Per-row per-feature z-scores with population stddev; constant features give 0."""
    if ds.n < 2:
        raise ValueError("need at least 2 rows for z-scores")
    mu = ds.features.mean(axis=0)
    sigma = ds.features.std(axis=0)
    safe = np.where(sigma == 0.0, 1.0, sigma)
    delta = (ds.features - mu) / safe
    delta[:, sigma == 0.0] = 0.0
    return delta


def remove_outliers(
    ds: Dataset, cfg: SanitizerConfig | None = None
) -> tuple[Dataset, list[RemovalEntry]]:
    """Drop rows whose max per-feature |z| exceeds g. Single pass, no recompute."""
    cfg = cfg or SanitizerConfig()
    scores = np.abs(zscore_stats(ds)).max(axis=1)
    remove = scores > cfg.g
    if remove.all():
        raise ValueError("degenerate dataset after sanitization: every row removed")
    entries = [RemovalEntry(int(i), float(scores[i])) for i in np.flatnonzero(remove)]
    if not entries:
        return ds, []
    kept = ds.subset(np.flatnonzero(~remove), provenance=f"{ds.provenance}|outliers_removed")
    return kept, entries


def sanitize(ds: Dataset, cfg: SanitizerConfig | None = None) -> SanitizationOutcome:
    """Relabel by neighbor confidence, then remove z-score outliers.

    Row indices in both logs refer to the input dataset (relabeling neither
    reorders nor drops rows, so the removal log indexes the same rows).
    """
    cfg = cfg or SanitizerConfig()
    relabeled_ds, relabel_log = relabel(ds, cfg)
    sanitized, removal_log = remove_outliers(relabeled_ds, cfg)
    return SanitizationOutcome(
        sanitized=sanitized, relabeled=relabel_log, removed=removal_log, config=cfg
    )
