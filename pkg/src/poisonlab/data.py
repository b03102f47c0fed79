"""Loading, splitting, normalization, and synthesis of multiclass tabular datasets."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

IRIS_FEATURE_NAMES = ("sepal_length", "sepal_width", "petal_length", "petal_width")

DATASET_SCHEMA = "poisonlab.dataset/v1"


class DataFormatError(ValueError):
    """An input file does not match its declared on-disk format."""


def round_half_up(x: float) -> int:
    """Round a non-negative quantity with .5 going up (150*0.75 -> 113)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix plus integer class labels.

    ``class_count`` is declared, not inferred, so a label-flipping attack can
    never silently shrink the label space. Arrays are copied and marked
    read-only; derived datasets are new objects.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    feature_names: tuple[str, ...] | None = None
    provenance: str = ""

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be a 2-D matrix, got ndim={feats.ndim}")
        if feats.shape[0] == 0:
            raise ValueError("dataset must contain at least one row")
        if labels.shape != (feats.shape[0],):
            raise ValueError(
                f"labels must be a length-{feats.shape[0]} vector, got shape {labels.shape}"
            )
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain NaN or infinite values")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise ValueError(
                f"labels must lie in [0, {self.class_count}), "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        names = self.feature_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != feats.shape[1]:
                raise ValueError("feature_names length does not match feature count")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def with_labels(self, labels, provenance: str | None = None) -> "Dataset":
        return Dataset(
            self.features,
            labels,
            self.class_count,
            self.feature_names,
            self.provenance if provenance is None else provenance,
        )

    def subset(self, indices, provenance: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.class_count,
            self.feature_names,
            self.provenance if provenance is None else provenance,
        )

    def to_json(self) -> dict:
        return {
            "schema": DATASET_SCHEMA,
            "class_count": int(self.class_count),
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "provenance": self.provenance,
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        if doc.get("schema") != DATASET_SCHEMA:
            raise DataFormatError(f"unexpected dataset schema {doc.get('schema')!r}")
        names = doc.get("feature_names")
        return cls(
            np.asarray(doc["features"], dtype=np.float64),
            np.asarray(doc["labels"], dtype=np.int64),
            int(doc["class_count"]),
            tuple(names) if names else None,
            doc.get("provenance", ""),
        )


def save_dataset_json(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(ds.to_json()), encoding="utf-8")


def load_dataset_json(path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    return Dataset.from_json(doc)


@dataclass(frozen=True)
class StandardizationParams:
    """Per-feature mean and population standard deviation of a training split."""

    mean: np.ndarray
    stddev: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        std = np.array(self.stddev, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise ValueError("mean and stddev must be equal-length vectors")
        if np.any(std < 0):
            raise ValueError("stddev entries must be non-negative")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "stddev", std)


def load_iris_csv(path) -> Dataset:
    """Load an IRIS-format CSV: four numeric fields plus a species string per row.

    Species names are mapped to class ids in lexicographic order, and at
    least two distinct species must appear. Blank lines are skipped.
    """
    rows: list[tuple[list[float], str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected 4 numeric fields + species, "
                    f"got {len(parts)} fields"
                )
            try:
                feats = [float(p) for p in parts[:4]]
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}: line {lineno}: non-numeric feature value"
                ) from exc
            species = parts[4]
            if not species:
                raise DataFormatError(f"{path}: line {lineno}: empty species name")
            rows.append((feats, species))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    species_names = sorted({s for _, s in rows})
    if len(species_names) < 2:
        raise DataFormatError(
            f"{path}: found a single species {species_names[0]!r}; need at least 2 classes"
        )
    mapping = {s: i for i, s in enumerate(species_names)}
    features = np.array([f for f, _ in rows], dtype=np.float64)
    labels = np.array([mapping[s] for _, s in rows], dtype=np.int64)
    return Dataset(
        features,
        labels,
        class_count=len(species_names),
        feature_names=IRIS_FEATURE_NAMES,
        provenance=f"iris_csv:{Path(path).name}",
    )


def _read_idx_header(raw: bytes, path, magic_expected: int, n_dims: int) -> tuple:
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: truncated IDX header")
    values = struct.unpack(f">{1 + n_dims}I", raw[:header_len])
    if values[0] != magic_expected:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{values[0]:08x}, expected 0x{magic_expected:08x}"
        )
    return values[1:], raw[header_len:]


def load_idx_pair(images_path, labels_path) -> Dataset:
    """Load a big-endian IDX image/label pair; pixels are scaled into [0, 1]."""
    img_raw = Path(images_path).read_bytes()
    (n_images, rows, cols), img_payload = _read_idx_header(
        img_raw, images_path, IDX_IMAGES_MAGIC, 3
    )
    need = n_images * rows * cols
    if len(img_payload) < need:
        raise DataFormatError(
            f"{images_path}: truncated image payload: need {need} bytes, found {len(img_payload)}"
        )
    if len(img_payload) > need:
        raise DataFormatError(f"{images_path}: {len(img_payload) - need} trailing bytes")

    lbl_raw = Path(labels_path).read_bytes()
    (n_labels,), lbl_payload = _read_idx_header(lbl_raw, labels_path, IDX_LABELS_MAGIC, 1)
    if len(lbl_payload) < n_labels:
        raise DataFormatError(
            f"{labels_path}: truncated label payload: need {n_labels} bytes, "
            f"found {len(lbl_payload)}"
        )
    if len(lbl_payload) > n_labels:
        raise DataFormatError(f"{labels_path}: {len(lbl_payload) - n_labels} trailing bytes")
    if n_images != n_labels:
        raise DataFormatError(
            f"count mismatch: {n_images} images in {images_path} vs "
            f"{n_labels} labels in {labels_path}"
        )

    features = np.frombuffer(img_payload, dtype=np.uint8).reshape(n_images, rows * cols)
    labels = np.frombuffer(lbl_payload, dtype=np.uint8).astype(np.int64)
    if labels.max(initial=0) > 9:
        raise DataFormatError(f"{labels_path}: label outside [0, 10)")
    return Dataset(
        features.astype(np.float64) / 255.0,
        labels,
        class_count=10,
        provenance=f"idx:{Path(images_path).name}",
    )


def load_usps_text(path) -> Dataset:
    """Load USPS-format text: integer label + 256 reals in [-1, 1] per line.

    Values are rescaled linearly from [-1, 1] to [0, 1].
    """
    feature_rows: list[np.ndarray] = []
    labels: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != 257:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected label + 256 values, got {len(parts)} fields"
                )
            try:
                label_val = float(parts[0])
                values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: non-numeric value") from exc
            if not label_val.is_integer():
                raise DataFormatError(f"{path}: line {lineno}: non-integer label {parts[0]}")
            label = int(label_val)
            if not 0 <= label <= 9:
                raise DataFormatError(f"{path}: line {lineno}: label outside [0, 10)")
            labels.append(label)
            feature_rows.append((values + 1.0) / 2.0)
    if not feature_rows:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(
        np.vstack(feature_rows),
        np.array(labels, dtype=np.int64),
        class_count=10,
        provenance=f"usps_text:{Path(path).name}",
    )


def stratified_subsample(ds: Dataset, per_class: int, seed: int) -> Dataset:
    """Take up to ``per_class`` rows from each class, uniformly without replacement."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    chosen: list[np.ndarray] = []
    for c in range(ds.class_count):
        idx_c = np.flatnonzero(ds.labels == c)
        take = min(per_class, idx_c.size)
        if take == 0:
            continue
        picked = rng.choice(idx_c, size=take, replace=False)
        picked.sort()
        chosen.append(picked)
    indices = np.concatenate(chosen)
    return ds.subset(indices, provenance=f"{ds.provenance}|subsample:{per_class},seed={seed}")


def split(ds: Dataset, train_fraction: float = 0.75, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random disjoint partition; |train| = round-half-up(train_fraction * n)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n_train = round_half_up(train_fraction * ds.n)
    if n_train == 0 or n_train == ds.n:
        raise ValueError(
            f"split of n={ds.n} at fraction {train_fraction} leaves one side empty"
        )
    perm = np.random.default_rng(seed).permutation(ds.n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (
        ds.subset(train_idx, provenance=f"{ds.provenance}|split:train"),
        ds.subset(test_idx, provenance=f"{ds.provenance}|split:test"),
    )


def standardize_fit(train: Dataset) -> StandardizationParams:
    """Per-feature mean and population (divide-by-n) standard deviation."""
    return StandardizationParams(
        train.features.mean(axis=0), train.features.std(axis=0)
    )


def standardize_apply(ds: Dataset, params: StandardizationParams) -> Dataset:
    """(x - mean) / stddev per feature; constant features map to 0."""
    if params.mean.shape[0] != ds.d:
        raise ValueError(
            f"standardization params have {params.mean.shape[0]} features, dataset has {ds.d}"
        )
    safe = np.where(params.stddev == 0.0, 1.0, params.stddev)
    feats = (ds.features - params.mean) / safe
    feats[:, params.stddev == 0.0] = 0.0
    return Dataset(
        feats,
        ds.labels,
        ds.class_count,
        ds.feature_names,
        provenance=f"{ds.provenance}|standardized",
    )


def synth_blobs(
    class_count: int, per_class: int, d: int, spread: float, seed: int
) -> Dataset:
    """Seeded Gaussian clusters around well-separated centers.

    Centers sit on a radius-4 ring in the first two dimensions (evenly spaced
    line for d=1) with a seeded rotation, so clusters never collide for any
    class count while staying fully seed-deterministic.
    """
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    centers = np.zeros((class_count, d))
    if d == 1:
        offsets = rng.uniform(-0.5, 0.5, class_count)
        centers[:, 0] = (np.arange(class_count) - (class_count - 1) / 2.0) * 4.0 + offsets
    else:
        angle0 = rng.uniform(0.0, 2.0 * math.pi)
        angles = angle0 + 2.0 * math.pi * np.arange(class_count) / class_count
        centers[:, 0] = 4.0 * np.cos(angles)
        centers[:, 1] = 4.0 * np.sin(angles)
        if d > 2:
            centers[:, 2:] = rng.uniform(-0.5, 0.5, (class_count, d - 2))
    labels = np.repeat(np.arange(class_count), per_class)
    noise = rng.normal(0.0, spread, (labels.size, d))
    features = centers[labels] + noise
    return Dataset(
        features,
        labels,
        class_count,
        provenance=f"synth_blobs:c={class_count},n={per_class},d={d},spread={spread},seed={seed}",
    )
