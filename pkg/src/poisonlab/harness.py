"""Experiment-matrix planner and runner with caching, resume, and summaries.

A matrix cell is one (dataset, model, attack, poisoning level, seed,
pipeline variant) combination. Cells are planned in lexicographic coordinate
order; every stage seed derives from the master seed and the coordinate
values (never from list positions or the variant), so execution order and
worker count cannot change any result, and variants of the same cell compare
against identical poisoned data. Results append to a JSON-lines file strictly
in plan order, which makes interrupted runs resumable and finished files
byte-reproducible apart from wall_time fields.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import poison_outliers, poison_random_labels, poison_subpopulation
from .data import (
    Dataset,
    load_dataset_json,
    load_idx_pair,
    load_iris_csv,
    load_usps_text,
    split,
    standardize_apply,
    standardize_fit,
    stratified_subsample,
    synth_blobs,
)
from .fort import FortConfig, fort_fit
from .metrics import METRIC_NAMES, MetricsBundle, compute_bundle
from .models import MODEL_KINDS, fit, predict
from .sanitizer import SanitizerConfig, sanitize

log = logging.getLogger(__name__)

CODE_VERSION = "poisonlab-cells-v1"

SPEC_VERSION = 1

ATTACKS = ("oop", "rlpa", "subp")

# the four matrix variants plus an unpoisoned reference pipeline
VARIANTS = (
    "clean_baseline",
    "fort_only",
    "poisoned_baseline",
    "sanitize_only",
    "securelearn_full",
)
SANITIZING_VARIANTS = ("sanitize_only", "securelearn_full")
FORT_VARIANTS = ("fort_only", "securelearn_full")

DATASET_FORMATS = ("iris_csv", "idx", "usps_text", "dataset_json", "synth_blobs")

SUMMARY_COLUMNS = (
    "dataset",
    "model",
    "attack",
    "delta_l",
    "variant",
    "metric",
    "mean",
    "std",
    "n_seeds",
)

BOUNDS_COLUMNS = ("model", "dataset", "attack", "dr_lb", "dr_ub", "cr_lb", "cr_ub")


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash; stable, fast, and independent of PYTHONHASHSEED."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def derive_seed(*parts) -> int:
    """Deterministic stage seed from coordinate values."""
    return fnv1a64("|".join(str(p) for p in parts)) & 0x7FFFFFFF


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    format: str
    path: str | None = None
    labels_path: str | None = None
    subsample_per_class: int | None = None
    # synth_blobs parameters
    class_count: int | None = None
    per_class: int | None = None
    dims: int | None = None
    spread: float | None = None
    blob_seed: int | None = None

    def __post_init__(self):
        if self.format not in DATASET_FORMATS:
            raise ValueError(f"unknown dataset format {self.format!r}")
        if self.format == "synth_blobs":
            for attr in ("class_count", "per_class", "dims", "spread", "blob_seed"):
                if getattr(self, attr) is None:
                    raise ValueError(f"synth_blobs dataset needs {attr}")
        elif self.path is None:
            raise ValueError(f"dataset {self.name!r} needs a path")
        if self.format == "idx" and self.labels_path is None:
            raise ValueError(f"idx dataset {self.name!r} needs labels_path")
        if self.subsample_per_class is not None and self.subsample_per_class < 1:
            raise ValueError("subsample_per_class must be >= 1")

    def to_json(self) -> dict:
        doc = {"name": self.name, "format": self.format}
        for key in (
            "path",
            "labels_path",
            "subsample_per_class",
            "class_count",
            "per_class",
            "dims",
            "spread",
            "blob_seed",
        ):
            value = getattr(self, key)
            if value is not None:
                doc[key] = value
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSpec":
        return cls(**doc)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "hyperparams", dict(self.hyperparams))

    def to_json(self) -> dict:
        return {"kind": self.kind, "hyperparams": self.hyperparams}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelSpec":
        return cls(kind=doc["kind"], hyperparams=doc.get("hyperparams", {}))


@dataclass(frozen=True)
class ExperimentSpec:
    datasets: tuple[DatasetSpec, ...]
    models: tuple[ModelSpec, ...]
    attacks: tuple[str, ...] = ATTACKS
    levels: tuple[float, ...] = (0.10, 0.15, 0.20)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    variants: tuple[str, ...] = (
        "poisoned_baseline",
        "sanitize_only",
        "fort_only",
        "securelearn_full",
    )
    sanitizer: SanitizerConfig = field(default_factory=SanitizerConfig)
    fort: FortConfig = field(default_factory=FortConfig)
    train_fraction: float = 0.75
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "attacks", tuple(self.attacks))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "variants", tuple(self.variants))
        for name in ("datasets", "models", "attacks", "levels", "seeds", "variants"):
            if not getattr(self, name):
                raise ValueError(f"experiment spec has an empty {name} dimension")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dataset names")
        kinds = [m.kind for m in self.models]
        if len(set(kinds)) != len(kinds):
            raise ValueError("duplicate model kinds")
        if len(set(self.attacks)) != len(self.attacks):
            raise ValueError("duplicate attacks")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError("duplicate levels")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("duplicate seeds")
        if len(set(self.variants)) != len(self.variants):
            raise ValueError("duplicate variants")
        for attack in self.attacks:
            if attack not in ATTACKS:
                raise ValueError(f"unknown attack {attack!r}")
        for level in self.levels:
            if not 0.0 < level < 1.0:
                raise ValueError(f"poisoning level must be in (0, 1), got {level}")
        for variant in self.variants:
            if variant not in VARIANTS:
                raise ValueError(f"unknown variant {variant!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")

    def to_json(self) -> dict:
        return {
            "spec_version": SPEC_VERSION,
            "master_seed": self.master_seed,
            "train_fraction": self.train_fraction,
            "datasets": [d.to_json() for d in self.datasets],
            "models": [m.to_json() for m in self.models],
            "attacks": list(self.attacks),
            "levels": list(self.levels),
            "seeds": list(self.seeds),
            "variants": list(self.variants),
            "sanitizer": self.sanitizer.to_json(),
            "fort": self.fort.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentSpec":
        version = doc.get("spec_version")
        if version != SPEC_VERSION:
            raise ValueError(f"unsupported spec_version {version!r}, expected {SPEC_VERSION}")
        return cls(
            datasets=tuple(DatasetSpec.from_json(d) for d in doc["datasets"]),
            models=tuple(ModelSpec.from_json(m) for m in doc["models"]),
            attacks=tuple(doc.get("attacks", ATTACKS)),
            levels=tuple(doc.get("levels", (0.10, 0.15, 0.20))),
            seeds=tuple(doc.get("seeds", (0, 1, 2, 3, 4))),
            variants=tuple(
                doc.get(
                    "variants",
                    ("poisoned_baseline", "sanitize_only", "fort_only", "securelearn_full"),
                )
            ),
            sanitizer=SanitizerConfig.from_json(doc.get("sanitizer", {})),
            fort=FortConfig.from_json(doc.get("fort", {})),
            train_fraction=float(doc.get("train_fraction", 0.75)),
            master_seed=int(doc.get("master_seed", 0)),
        )


@dataclass(frozen=True)
class Cell:
    dataset: str
    model: str
    attack: str
    delta_l: float
    seed: int
    variant: str


@dataclass
class CellResult:
    dataset: str
    model: str
    attack: str
    delta_l: float
    seed: int
    variant: str
    content_hash: str
    wall_time_seconds: float
    metrics: MetricsBundle | None = None
    error: str | None = None
    n_train: int | None = None
    n_test: int | None = None
    adv_count: int | None = None
    poison_record: dict | None = None
    sanitization: dict | None = None

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "attack": self.attack,
            "delta_l": self.delta_l,
            "seed": self.seed,
            "variant": self.variant,
            "content_hash": self.content_hash,
            "wall_time_seconds": self.wall_time_seconds,
            "metrics": self.metrics.to_json() if self.metrics else None,
            "error": self.error,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "adv_count": self.adv_count,
            "poison_record": self.poison_record,
            "sanitization": self.sanitization,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CellResult":
        return cls(
            dataset=doc["dataset"],
            model=doc["model"],
            attack=doc["attack"],
            delta_l=float(doc["delta_l"]),
            seed=int(doc["seed"]),
            variant=doc["variant"],
            content_hash=doc["content_hash"],
            wall_time_seconds=float(doc["wall_time_seconds"]),
            metrics=MetricsBundle.from_json(doc["metrics"]) if doc.get("metrics") else None,
            error=doc.get("error"),
            n_train=doc.get("n_train"),
            n_test=doc.get("n_test"),
            adv_count=doc.get("adv_count"),
            poison_record=doc.get("poison_record"),
            sanitization=doc.get("sanitization"),
        )


def plan_cells(spec: ExperimentSpec) -> list[Cell]:
    """Cartesian product in lexicographic coordinate order.

    The clean_baseline variant has no attack axis, so it contributes one
    cell per (dataset, model, seed) with attack "none" at level 0.
    """
    tuples = []
    for ds in spec.datasets:
        for model in spec.models:
            for variant in spec.variants:
                if variant == "clean_baseline":
                    for seed in spec.seeds:
                        tuples.append((ds.name, model.kind, "none", 0.0, seed, variant))
                    continue
                for attack in spec.attacks:
                    for level in spec.levels:
                        for seed in spec.seeds:
                            tuples.append(
                                (ds.name, model.kind, attack, level, seed, variant)
                            )
    tuples.sort()
    return [Cell(*t) for t in tuples]


def cell_content_hash(spec: ExperimentSpec, cell: Cell) -> str:
    """Pure function of the cell's inputs and the code version tag."""
    ds = next(d for d in spec.datasets if d.name == cell.dataset)
    model = next(m for m in spec.models if m.kind == cell.model)
    doc = {
        "code": CODE_VERSION,
        "master_seed": spec.master_seed,
        "train_fraction": spec.train_fraction,
        "dataset": ds.to_json(),
        "model": model.to_json(),
        "attack": cell.attack,
        "delta_l": cell.delta_l,
        "seed": cell.seed,
        "variant": cell.variant,
    }
    if cell.variant in SANITIZING_VARIANTS:
        doc["sanitizer"] = spec.sanitizer.to_json()
    if cell.variant in FORT_VARIANTS:
        doc["fort"] = spec.fort.to_json()
    return f"{fnv1a64(canonical_json(doc)):016x}"


_DATASET_CACHE: dict[str, Dataset] = {}


def _load_dataset(ds_spec: DatasetSpec, master_seed: int) -> Dataset:
    key = canonical_json({"spec": ds_spec.to_json(), "master_seed": master_seed})
    if key in _DATASET_CACHE:
        return _DATASET_CACHE[key]
    if ds_spec.format == "iris_csv":
        ds = load_iris_csv(ds_spec.path)
    elif ds_spec.format == "idx":
        ds = load_idx_pair(ds_spec.path, ds_spec.labels_path)
    elif ds_spec.format == "usps_text":
        ds = load_usps_text(ds_spec.path)
    elif ds_spec.format == "dataset_json":
        ds = load_dataset_json(ds_spec.path)
    else:
        ds = synth_blobs(
            ds_spec.class_count,
            ds_spec.per_class,
            ds_spec.dims,
            ds_spec.spread,
            ds_spec.blob_seed,
        )
    if ds_spec.subsample_per_class is not None:
        ds = stratified_subsample(
            ds,
            ds_spec.subsample_per_class,
            derive_seed(master_seed, ds_spec.name, "subsample"),
        )
    _DATASET_CACHE[key] = ds
    return ds


_ATTACK_FNS = {
    "rlpa": poison_random_labels,
    "subp": poison_subpopulation,
    "oop": poison_outliers,
}


def run_cell(spec: ExperimentSpec, cell: Cell) -> CellResult:
    """Execute one pipeline cell: load, split, standardize, attack, defend, fit, score.

    Evaluation is always on the clean test split. Any stage error is captured
    in the result so a matrix run can continue past broken cells.
    """
    started = time.perf_counter()
    content_hash = cell_content_hash(spec, cell)
    result = CellResult(
        dataset=cell.dataset,
        model=cell.model,
        attack=cell.attack,
        delta_l=cell.delta_l,
        seed=cell.seed,
        variant=cell.variant,
        content_hash=content_hash,
        wall_time_seconds=0.0,
    )
    try:
        ds_spec = next(d for d in spec.datasets if d.name == cell.dataset)
        model_spec = next(m for m in spec.models if m.kind == cell.model)
        ds = _load_dataset(ds_spec, spec.master_seed)
        train, test = split(
            ds, spec.train_fraction, derive_seed(spec.master_seed, cell.dataset, cell.seed, "split")
        )
        params = standardize_fit(train)
        train = standardize_apply(train, params)
        test = standardize_apply(test, params)

        record = None
        outcome = None
        if cell.variant == "clean_baseline":
            model_input = train
        else:
            attack_seed = derive_seed(
                spec.master_seed, cell.dataset, cell.attack, repr(cell.delta_l), cell.seed, "attack"
            )
            poisoned, record = _ATTACK_FNS[cell.attack](train, cell.delta_l, attack_seed)
            if cell.variant in SANITIZING_VARIANTS:
                outcome = sanitize(poisoned, spec.sanitizer)
                model_input = outcome.sanitized
            else:
                model_input = poisoned

        fit_seed = derive_seed(spec.master_seed, cell.dataset, cell.model, cell.seed, "fit")
        if cell.variant in FORT_VARIANTS:
            model, adv_count = fort_fit(
                cell.model, model_input, model_spec.hyperparams, spec.fort, fit_seed
            )
            result.adv_count = adv_count
        else:
            model = fit(cell.model, model_input, model_spec.hyperparams, fit_seed)

        y_pred = predict(model, test.features)
        result.metrics = compute_bundle(
            test.labels,
            y_pred,
            ds.class_count,
            record=record if outcome is not None else None,
            outcome=outcome,
        )
        result.n_train = model_input.n
        result.n_test = test.n
        result.poison_record = record.to_json() if record is not None else None
        result.sanitization = outcome.to_json() if outcome is not None else None
    except Exception as exc:  # cell errors must not kill the matrix
        result.error = f"{type(exc).__name__}: {exc}"
    result.wall_time_seconds = time.perf_counter() - started
    return result


_SPEC_CACHE: dict[str, ExperimentSpec] = {}


def _run_cell_job(spec_doc_json: str, cell: Cell) -> CellResult:
    spec = _SPEC_CACHE.get(spec_doc_json)
    if spec is None:
        spec = ExperimentSpec.from_json(json.loads(spec_doc_json))
        _SPEC_CACHE[spec_doc_json] = spec
    return run_cell(spec, cell)


def _load_valid_prefix(
    results_path: Path, cells: list[Cell], hashes: list[str]
) -> list[CellResult]:
    """Cached results that match the current plan, in plan order.

    The results file is always written in plan order, so a valid cache is a
    prefix of the plan. Corrupt or stale entries (config or code changed)
    invalidate everything from their position on; the file is truncated to
    the valid prefix and those cells recompute.
    """
    lines = results_path.read_text(encoding="utf-8").splitlines()
    loaded: list[CellResult] = []
    for i, line in enumerate(lines):
        if i >= len(cells):
            log.warning("results file has %d extra lines; discarding them", len(lines) - i)
            break
        try:
            doc = json.loads(line)
            result = CellResult.from_json(doc)
        except (ValueError, KeyError) as exc:
            log.warning("corrupt cache entry at line %d (%s); recomputing from there", i + 1, exc)
            break
        if result.content_hash != hashes[i] or Cell(
            result.dataset, result.model, result.attack, result.delta_l, result.seed, result.variant
        ) != cells[i]:
            log.warning("stale cache entry at line %d; recomputing from there", i + 1)
            break
        loaded.append(result)
    if len(loaded) < len(lines):
        with open(results_path, "w", encoding="utf-8") as fh:
            for result in loaded:
                fh.write(json.dumps(result.to_json(), sort_keys=True) + "\n")
    return loaded


def run_matrix(
    spec: ExperimentSpec, out_dir, workers: int = 1
) -> list[CellResult]:
    """Run every non-cached cell, appending results to <out_dir>/results.jsonl.

    Lines are committed strictly in plan order regardless of worker count, so
    an interrupted run leaves a valid prefix and a rerun with the same spec
    reproduces the file byte-for-byte apart from wall_time fields.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.jsonl"
    cells = plan_cells(spec)
    hashes = [cell_content_hash(spec, cell) for cell in cells]

    done: list[CellResult] = []
    if results_path.exists():
        done = _load_valid_prefix(results_path, cells, hashes)
    remaining = cells[len(done) :]
    if not remaining:
        return done

    spec_doc_json = json.dumps(spec.to_json(), sort_keys=True)
    computed: list[CellResult] = []
    with open(results_path, "a", encoding="utf-8") as fh:

        def commit(result: CellResult):
            fh.write(json.dumps(result.to_json(), sort_keys=True) + "\n")
            fh.flush()
            computed.append(result)

        if workers <= 1:
            for cell in remaining:
                commit(run_cell(spec, cell))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_cell_job, spec_doc_json, cell) for cell in remaining]
                for future in futures:
                    commit(future.result())
    return done + computed


def load_results(out_dir) -> list[CellResult]:
    """Read a results directory back; corrupt lines are skipped with a warning."""
    results_path = Path(out_dir) / "results.jsonl"
    if not results_path.exists():
        raise FileNotFoundError(f"no results.jsonl under {out_dir}")
    results = []
    for i, line in enumerate(results_path.read_text(encoding="utf-8").splitlines()):
        try:
            results.append(CellResult.from_json(json.loads(line)))
        except (ValueError, KeyError) as exc:
            log.warning("skipping corrupt results line %d: %s", i + 1, exc)
    return results


@dataclass(frozen=True)
class SummaryRow:
    dataset: str
    model: str
    attack: str
    delta_l: float
    variant: str
    metric: str
    mean: float
    std: float
    n_seeds: int


def summarize(results: list[CellResult]) -> list[SummaryRow]:
    """Per-group mean/std across seeds; errored cells are excluded and flagged.

    Groups with errored cells get an extra "errored_cells" row whose mean is
    the error count.
    """
    groups: dict[tuple, list[CellResult]] = {}
    for r in results:
        groups.setdefault((r.dataset, r.model, r.attack, r.delta_l, r.variant), []).append(r)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        valid = [r for r in members if r.error is None and r.metrics is not None]
        for metric in METRIC_NAMES:
            values = [
                getattr(r.metrics, metric)
                for r in valid
                if getattr(r.metrics, metric) is not None
            ]
            if not values:
                continue
            arr = np.asarray(values, dtype=np.float64)
            rows.append(SummaryRow(*key, metric, float(arr.mean()), float(arr.std()), len(values)))
        errored = len(members) - len(valid)
        if errored:
            rows.append(SummaryRow(*key, "errored_cells", float(errored), 0.0, len(members)))
    return rows


@dataclass(frozen=True)
class BoundsRow:
    model: str
    dataset: str
    attack: str
    dr_lb: float
    dr_ub: float
    cr_lb: float
    cr_ub: float


def bounds_table(results: list[CellResult]) -> list[BoundsRow]:
    """Min/max detection and correction rates per (model, dataset, attack).

    Bounds are taken across poisoning levels and seeds over every cell that
    ran the sanitizer (the only cells carrying DR/CR).
    """
    groups: dict[tuple, list[CellResult]] = {}
    for r in results:
        if r.error is None and r.metrics is not None and r.metrics.detection_rate is not None:
            groups.setdefault((r.model, r.dataset, r.attack), []).append(r)
    rows = []
    for key in sorted(groups):
        drs = [r.metrics.detection_rate for r in groups[key]]
        crs = [r.metrics.correction_rate for r in groups[key]]
        rows.append(BoundsRow(*key, min(drs), max(drs), min(crs), max(crs)))
    return rows


def render_summary_csv(rows: list[SummaryRow]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in rows:
        lines.append(
            f"{r.dataset},{r.model},{r.attack},{r.delta_l},{r.variant},"
            f"{r.metric},{r.mean:.6f},{r.std:.6f},{r.n_seeds}"
        )
    return "\n".join(lines) + "\n"


def render_summary_md(rows: list[SummaryRow]) -> str:
    lines = [
        "| " + " | ".join(SUMMARY_COLUMNS) + " |",
        "|" + "---|" * len(SUMMARY_COLUMNS),
    ]
    for r in rows:
        lines.append(
            f"| {r.dataset} | {r.model} | {r.attack} | {r.delta_l} | {r.variant} "
            f"| {r.metric} | {r.mean:.4f} | {r.std:.4f} | {r.n_seeds} |"
        )
    return "\n".join(lines) + "\n"


def render_bounds_csv(rows: list[BoundsRow]) -> str:
    lines = [",".join(BOUNDS_COLUMNS)]
    for r in rows:
        lines.append(
            f"{r.model},{r.dataset},{r.attack},"
            f"{r.dr_lb:.6f},{r.dr_ub:.6f},{r.cr_lb:.6f},{r.cr_ub:.6f}"
        )
    return "\n".join(lines) + "\n"


def render_bounds_md(rows: list[BoundsRow]) -> str:
    lines = [
        "| " + " | ".join(BOUNDS_COLUMNS) + " |",
        "|" + "---|" * len(BOUNDS_COLUMNS),
    ]
    for r in rows:
        lines.append(
            f"| {r.model} | {r.dataset} | {r.attack} | {r.dr_lb:.4f} | {r.dr_ub:.4f} "
            f"| {r.cr_lb:.4f} | {r.cr_ub:.4f} |"
        )
    return "\n".join(lines) + "\n"
