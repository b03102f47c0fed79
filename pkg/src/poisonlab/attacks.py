"""Seeded label-poisoning attacks that emit an exact ground-truth record.

All three attacks spend a budget of m = round_half_up(delta_l * n) rows:
uniform random flips, a cluster-concentrated flip/duplicate attack, and
flips targeted at the statistically most extreme rows. The returned
PoisonRecord is a complete diff, so poisoning can be replayed or inverted
bit-exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, round_half_up

log = logging.getLogger(__name__)

ATTACK_KINDS = ("rlpa", "subp", "oop")

RECORD_SCHEMA = "poisonlab.poison_record/v1"


@dataclass(frozen=True)
class FlippedRow:
    index: int
    old_label: int
    new_label: int


@dataclass(frozen=True)
class InjectedRow:
    """A row appended by the attack: a duplicate of ``source_index`` with a new label."""

    index: int
    source_index: int
    label: int


@dataclass(frozen=True)
class PoisonRecord:
    """Ground-truth ledger of everything an attack changed."""

    attack_kind: str
    delta_l: float
    seed: int
    flipped: tuple[FlippedRow, ...]
    injected: tuple[InjectedRow, ...]
    note: str = ""

    @property
    def budget(self) -> int:
        return len(self.flipped) + len(self.injected)

    def poisoned_indices(self) -> list[int]:
        return sorted([f.index for f in self.flipped] + [i.index for i in self.injected])

    def to_json(self) -> dict:
        return {
            "schema": RECORD_SCHEMA,
            "attack_kind": self.attack_kind,
            "delta_l": self.delta_l,
            "seed": self.seed,
            "flipped": [
                {"index": f.index, "old_label": f.old_label, "new_label": f.new_label}
                for f in self.flipped
            ],
            "injected": [
                {"index": i.index, "source": i.source_index, "label": i.label}
                for i in self.injected
            ],
            "note": self.note,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PoisonRecord":
        if doc.get("schema") != RECORD_SCHEMA:
            raise ValueError(f"unexpected poison record schema {doc.get('schema')!r}")
        return cls(
            attack_kind=doc["attack_kind"],
            delta_l=float(doc["delta_l"]),
            seed=int(doc["seed"]),
            flipped=tuple(
                FlippedRow(int(f["index"]), int(f["old_label"]), int(f["new_label"]))
                for f in doc["flipped"]
            ),
            injected=tuple(
                InjectedRow(int(i["index"]), int(i["source"]), int(i["label"]))
                for i in doc["injected"]
            ),
            note=doc.get("note", ""),
        )


def _attack_budget(n: int, delta_l: float) -> int:
    if not 0.0 < delta_l < 1.0:
        raise ValueError(f"delta_l must be in (0, 1), got {delta_l}")
    m = round_half_up(delta_l * n)
    if m == 0:
        raise ValueError("budget too small for dataset")
    return m


def poison_random_labels(
    train: Dataset, delta_l: float, seed: int
) -> tuple[Dataset, PoisonRecord]:
    """Flip m uniformly chosen rows to uniformly chosen wrong labels."""
    m = _attack_budget(train.n, delta_l)
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(train.n, size=m, replace=False))
    draws = rng.integers(0, train.class_count - 1, size=m)
    labels = train.labels.copy()
    flipped = []
    for row, draw in zip(rows, draws):
        old = int(labels[row])
        new = int(draw if draw < old else draw + 1)  # uniform over the C-1 other classes
        labels[row] = new
        flipped.append(FlippedRow(int(row), old, new))
    poisoned = train.with_labels(
        labels, provenance=f"{train.provenance}|rlpa:dl={delta_l},seed={seed}"
    )
    return poisoned, PoisonRecord("rlpa", delta_l, seed, tuple(flipped), ())


def seeded_kmeans(
    X: np.ndarray, k: int, seed: int, max_iter: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with greedy farthest-point initialization.

    The first center is a seeded uniform row; each further center is the row
    farthest from its nearest chosen center (ties to the smallest row index).
    Empty clusters keep their previous center. Stops when assignments are
    stable or after ``max_iter`` rounds. Fully deterministic given the seed.
    """
    n = X.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[first]
    dmin = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        centers[j] = X[int(np.argmax(dmin))]
        dmin = np.minimum(dmin, ((X - centers[j]) ** 2).sum(axis=1))

    assign = None
    for _ in range(max_iter):
        dists = np.empty((n, k))
        for j in range(k):
            dists[:, j] = ((X - centers[j]) ** 2).sum(axis=1)
        new_assign = dists.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = X[assign == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
    return assign, centers


def poison_subpopulation(
    train: Dataset, delta_l: float, seed: int, k_clusters: int | None = None
) -> tuple[Dataset, PoisonRecord]:
    """Concentrate the poison in one feature-space cluster.

    The training features are clustered with seeded k-means; the cluster
    whose size is closest to the budget m from below is selected and its
    members' labels are flipped to the majority label of the nearest other
    cluster. Rows already carrying the target label are skipped (a no-op
    flip would corrupt detection/correction accounting); any remaining
    budget is spent appending duplicates of the cluster's rows with the
    target label, recorded as injected.
    """
    k = train.class_count if k_clusters is None else k_clusters
    if train.n < k:
        raise ValueError(f"need n >= k_clusters, got n={train.n}, k={k}")
    m = _attack_budget(train.n, delta_l)
    assign, centers = seeded_kmeans(train.features, k, seed)
    sizes = np.bincount(assign, minlength=k)

    note = ""
    candidates = [j for j in range(k) if 0 < sizes[j] <= m]
    if candidates:
        target_cluster = max(candidates, key=lambda j: (sizes[j], -j))
    else:
        # all clusters larger than the budget (or empty): fall back to the largest
        target_cluster = int(np.argmax(sizes))
        note = f"fallback=largest_cluster,size={int(sizes[target_cluster])}"

    members = np.flatnonzero(assign == target_cluster)
    other = [
        j for j in range(k) if j != target_cluster and sizes[j] > 0
    ]
    if not other:
        raise ValueError("degenerate clustering: no non-empty cluster besides the target")
    center_dists = ((centers[other] - centers[target_cluster]) ** 2).sum(axis=1)
    nearest = other[int(np.argmin(center_dists))]
    votes = np.bincount(train.labels[assign == nearest], minlength=train.class_count)
    target_label = int(votes.argmax())

    labels = train.labels.copy()
    flipped = []
    for row in members:
        if len(flipped) == m:
            break
        old = int(labels[row])
        if old == target_label:
            continue
        labels[row] = target_label
        flipped.append(FlippedRow(int(row), old, target_label))

    injected = []
    deficit = m - len(flipped)
    if deficit > 0:
        sources = [int(members[i % members.size]) for i in range(deficit)]
        injected = [
            InjectedRow(train.n + i, src, target_label) for i, src in enumerate(sources)
        ]
        features = np.vstack([train.features, train.features[sources]])
        labels = np.concatenate([labels, np.full(deficit, target_label, dtype=np.int64)])
    else:
        features = train.features

    poisoned = Dataset(
        features,
        labels,
        train.class_count,
        train.feature_names,
        provenance=f"{train.provenance}|subp:dl={delta_l},seed={seed}",
    )
    record = PoisonRecord("subp", delta_l, seed, tuple(flipped), tuple(injected), note)
    if note:
        log.info("subpopulation attack: %s", note)
    return poisoned, record


def poison_outliers(
    train: Dataset, delta_l: float, seed: int
) -> tuple[Dataset, PoisonRecord]:
    """Flip the m most extreme rows to the farthest other class.

    A row's outlier score is its maximum per-feature |z| (population
    statistics over the training features). The top-m rows by score (ties to
    the ascending row index) are flipped to the class whose feature-mean
    centroid is farthest from the row, among classes other than the row's
    own. Features are untouched and nothing is injected.
    """
    m = _attack_budget(train.n, delta_l)
    X = train.features
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    safe = np.where(sigma == 0.0, 1.0, sigma)
    z = np.abs((X - mu) / safe)
    z[:, sigma == 0.0] = 0.0
    scores = z.max(axis=1)
    order = np.lexsort((np.arange(train.n), -scores))
    chosen = np.sort(order[:m])

    present = np.flatnonzero(np.bincount(train.labels, minlength=train.class_count) > 0)
    centroids = {int(c): X[train.labels == c].mean(axis=0) for c in present}
    if len(centroids) < 2:
        raise ValueError("outlier attack needs rows from at least two classes")

    labels = train.labels.copy()
    flipped = []
    for row in chosen:
        old = int(labels[row])
        best_label, best_dist = -1, -1.0
        for c in sorted(centroids):
            if c == old:
                continue
            dist = float(((X[row] - centroids[c]) ** 2).sum())
            if dist > best_dist:
                best_label, best_dist = c, dist
        labels[row] = best_label
        flipped.append(FlippedRow(int(row), old, best_label))
    poisoned = train.with_labels(
        labels, provenance=f"{train.provenance}|oop:dl={delta_l},seed={seed}"
    )
    return poisoned, PoisonRecord("oop", delta_l, seed, tuple(flipped), ())


def apply_record(clean: Dataset, record: PoisonRecord) -> Dataset:
    """Replay a PoisonRecord against the clean training set it was built from."""
    labels = clean.labels.copy()
    for f in record.flipped:
        if labels[f.index] != f.old_label:
            raise ValueError(
                f"record does not match dataset: row {f.index} has label "
                f"{labels[f.index]}, record expects {f.old_label}"
            )
        labels[f.index] = f.new_label
    features = clean.features
    if record.injected:
        expected = list(range(clean.n, clean.n + len(record.injected)))
        if [i.index for i in record.injected] != expected:
            raise ValueError("injected indices are not contiguous past the dataset end")
        sources = [i.source_index for i in record.injected]
        features = np.vstack([features, features[sources]])
        labels = np.concatenate(
            [labels, np.array([i.label for i in record.injected], dtype=np.int64)]
        )
    return Dataset(
        features,
        labels,
        clean.class_count,
        clean.feature_names,
        provenance=f"{clean.provenance}|{record.attack_kind}:dl={record.delta_l},seed={record.seed}",
    )


def invert_record(poisoned: Dataset, record: PoisonRecord) -> Dataset:
    """Undo a PoisonRecord, restoring the clean training set bit-exactly."""
    n_clean = poisoned.n - len(record.injected)
    if record.injected:
        expected = list(range(n_clean, poisoned.n))
        if [i.index for i in record.injected] != expected:
            raise ValueError("injected indices are not the trailing rows")
    labels = poisoned.labels[:n_clean].copy()
    for f in record.flipped:
        if labels[f.index] != f.new_label:
            raise ValueError(
                f"record does not match dataset: row {f.index} has label "
                f"{labels[f.index]}, record expects {f.new_label}"
            )
        labels[f.index] = f.old_label
    return Dataset(
        poisoned.features[:n_clean],
        labels,
        poisoned.class_count,
        poisoned.feature_names,
        provenance=poisoned.provenance + "|unpoisoned",
    )
