"""Command-line surface: every pipeline stage plus the matrix runner.

All subcommands are scriptable (no prompts), all randomness is controlled by
--seed flags, and intermediate artifacts are JSON documents so stages compose
in shell pipelines. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .attacks import PoisonRecord, poison_outliers, poison_random_labels, poison_subpopulation
from .data import (
    load_dataset_json,
    load_idx_pair,
    load_iris_csv,
    load_usps_text,
    save_dataset_json,
    split,
    standardize_apply,
    standardize_fit,
    stratified_subsample,
    synth_blobs,
)
from .fort import FortConfig, build_adversarial_rows, fort_fit
from .harness import (
    ExperimentSpec,
    bounds_table,
    load_results,
    render_bounds_csv,
    render_bounds_md,
    render_summary_csv,
    render_summary_md,
    run_matrix,
    summarize,
)
from .metrics import compute_bundle
from .models import MODEL_KINDS, feature_importance, fit, load_model, predict, save_model
from .sanitizer import SanitizationOutcome, SanitizerConfig, sanitize


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1 (2 is for runtime errors)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_named_dataset(name: str, path: str, labels_path: str | None):
    if name == "iris":
        return load_iris_csv(path)
    if name == "mnist":
        if labels_path is None:
            raise ValueError("--labels is required for IDX-format (mnist) data")
        return load_idx_pair(path, labels_path)
    if name == "usps":
        return load_usps_text(path)
    raise ValueError(f"unknown dataset {name!r}")


def _cmd_data_inspect(args) -> int:
    ds = _load_named_dataset(args.dataset, args.path, args.labels)
    print(json.dumps({"rows": ds.n, "features": ds.d, "classes": ds.class_count}))
    return 0


def _cmd_data_export(args) -> int:
    ds = _load_named_dataset(args.dataset, args.path, args.labels)
    if args.subsample_per_class:
        ds = stratified_subsample(ds, args.subsample_per_class, args.seed)
    if args.train_out or args.test_out:
        if not (args.train_out and args.test_out):
            raise ValueError("--train-out and --test-out must be given together")
        train, test = split(ds, args.split, args.seed)
        if args.standardize:
            params = standardize_fit(train)
            train = standardize_apply(train, params)
            test = standardize_apply(test, params)
        save_dataset_json(train, args.train_out)
        save_dataset_json(test, args.test_out)
    if args.out:
        save_dataset_json(ds, args.out)
    if not (args.out or args.train_out):
        raise ValueError("nothing to do: give --out and/or --train-out/--test-out")
    return 0


def _cmd_data_synth(args) -> int:
    ds = synth_blobs(args.classes, args.per_class, args.dims, args.spread, args.seed)
    save_dataset_json(ds, args.out)
    return 0


def _cmd_poison(args) -> int:
    ds = load_dataset_json(getattr(args, "in"))
    attack_fns = {
        "rlpa": poison_random_labels,
        "subp": poison_subpopulation,
        "oop": poison_outliers,
    }
    poisoned, record = attack_fns[args.attack](ds, args.delta_l, args.seed)
    save_dataset_json(poisoned, args.out)
    Path(args.record).write_text(json.dumps(record.to_json()), encoding="utf-8")
    return 0


def _cmd_sanitize(args) -> int:
    ds = load_dataset_json(getattr(args, "in"))
    cfg = SanitizerConfig(k=args.k, gamma=args.gamma, g=args.g, distance=args.distance)
    outcome = sanitize(ds, cfg)
    save_dataset_json(outcome.sanitized, args.out)
    Path(args.log).write_text(json.dumps(outcome.to_json()), encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    ds = load_dataset_json(getattr(args, "in"))
    hyperparams = json.loads(args.hyperparams) if args.hyperparams else None
    if args.fort:
        cfg = FortConfig(
            c=args.c,
            b=args.b,
            tau=args.tau,
            q=args.q,
            importance_rows=args.importance_rows,
        )
        if args.adv_out:
            prelim = fit(args.model, ds, hyperparams, args.seed)
            importance = feature_importance(
                prelim, ds, seed=args.seed, max_rows=cfg.importance_rows
            )
            selected, adv = build_adversarial_rows(ds, prelim, importance, cfg)
            Path(args.adv_out).write_text(
                json.dumps(
                    {
                        "importance": importance.tolist(),
                        "rows": [
                            {
                                "source": src,
                                "label": int(ds.labels[src]),
                                "features": adv[i].tolist(),
                            }
                            for i, src in enumerate(selected)
                        ],
                    }
                ),
                encoding="utf-8",
            )
        model, adv_count = fort_fit(args.model, ds, hyperparams, cfg, args.seed)
        print(json.dumps({"adv_count": adv_count}))
    else:
        model = fit(args.model, ds, hyperparams, args.seed)
    save_model(model, args.out)
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    test = load_dataset_json(args.test)
    record = outcome = None
    if args.record and args.sanitize_log:
        record = PoisonRecord.from_json(
            json.loads(Path(args.record).read_text(encoding="utf-8"))
        )
        doc = json.loads(Path(args.sanitize_log).read_text(encoding="utf-8"))
        relabeled, removed = SanitizationOutcome.logs_from_json(doc)
        outcome = SanitizationOutcome(
            sanitized=None,
            relabeled=relabeled,
            removed=removed,
            config=SanitizerConfig(**doc["config"]),
        )
    elif args.record or args.sanitize_log:
        raise ValueError("--record and --sanitize-log must be given together")
    y_pred = predict(model, test.features)
    bundle = compute_bundle(
        test.labels, y_pred, test.class_count, record=record, outcome=outcome
    )
    payload = json.dumps(bundle.to_json())
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    print(payload)
    return 0


def _cmd_matrix(args) -> int:
    spec = ExperimentSpec.from_json(
        json.loads(Path(args.config).read_text(encoding="utf-8"))
    )
    if args.mode == "resume" and not (Path(args.out) / "results.jsonl").exists():
        raise ValueError(f"nothing to resume: no results.jsonl under {args.out}")
    results = run_matrix(spec, args.out, workers=args.workers)
    errored = sum(1 for r in results if r.error is not None)
    print(json.dumps({"cells": len(results), "errored": errored, "out": str(args.out)}))
    return 0


def _cmd_report(args) -> int:
    results = load_results(getattr(args, "in"))
    if args.bounds:
        rows = bounds_table(results)
        print(render_bounds_csv(rows) if args.format == "csv" else render_bounds_md(rows), end="")
    else:
        rows = summarize(results)
        print(
            render_summary_csv(rows) if args.format == "csv" else render_summary_md(rows), end=""
        )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="poisonlab",
        description=(
            "Data-poisoning attacks, two-layer sanitization (k-NN relabeling at k=7, "
            "gamma=0.4 plus z-score removal at g=3), feature-oriented adversarial "
            "training (c=0.01, b=0.001), and a 3D evaluation matrix over poisoning "
            "levels 0.10/0.15/0.20."
        ),
    )
    parser.add_argument("--version", action="version", version=f"poisonlab {__version__}")
    parser.add_argument(
        "--verbose", action="store_true", help="log pipeline notes to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    data = sub.add_parser("data", help="inspect, export, or synthesize datasets")
    data_sub = data.add_subparsers(dest="data_command", required=True)

    inspect = data_sub.add_parser(
        "inspect", help="print row/feature/class counts", formatter_class=fmt
    )
    inspect.add_argument("--dataset", required=True, choices=("iris", "mnist", "usps"))
    inspect.add_argument("--path", required=True, help="data file (IDX images for mnist)")
    inspect.add_argument("--labels", default=None, help="IDX labels file (mnist only)")
    inspect.set_defaults(func=_cmd_data_inspect)

    export = data_sub.add_parser(
        "export",
        help="convert a dataset to JSON, optionally subsampled/split/standardized",
        formatter_class=fmt,
    )
    export.add_argument("--dataset", required=True, choices=("iris", "mnist", "usps"))
    export.add_argument("--path", required=True)
    export.add_argument("--labels", default=None, help="IDX labels file (mnist only)")
    export.add_argument("--out", default=None, help="write the full dataset JSON here")
    export.add_argument(
        "--split", type=float, default=0.75, help="train fraction (round-half-up sizing)"
    )
    export.add_argument("--seed", type=int, default=0)
    export.add_argument("--subsample-per-class", type=int, default=None)
    export.add_argument("--train-out", default=None)
    export.add_argument("--test-out", default=None)
    export.add_argument(
        "--standardize",
        action="store_true",
        help="standardize with train-split statistics before writing the split",
    )
    export.set_defaults(func=_cmd_data_export)

    synth = data_sub.add_parser(
        "synth", help="generate seeded Gaussian blobs", formatter_class=fmt
    )
    synth.add_argument("--classes", type=int, default=3)
    synth.add_argument("--per-class", type=int, default=50)
    synth.add_argument("--dims", type=int, default=2)
    synth.add_argument("--spread", type=float, default=0.5)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=_cmd_data_synth)

    poison = sub.add_parser(
        "poison",
        help="apply a poisoning attack and write the ground-truth record",
        formatter_class=fmt,
        epilog="The evaluation matrix sweeps delta-l over 0.10, 0.15, 0.20.",
    )
    poison.add_argument("--attack", required=True, choices=("rlpa", "subp", "oop"))
    poison.add_argument(
        "--delta-l", type=float, required=True, help="poisoning level in (0, 1)"
    )
    poison.add_argument("--seed", type=int, required=True)
    poison.add_argument("--in", required=True, help="training dataset JSON")
    poison.add_argument("--out", required=True, help="poisoned dataset JSON")
    poison.add_argument("--record", required=True, help="poison record JSON")
    poison.set_defaults(func=_cmd_poison)

    san = sub.add_parser(
        "sanitize",
        help="k-NN confidence relabeling then z-score outlier removal",
        formatter_class=fmt,
    )
    san.add_argument("--in", required=True, help="dataset JSON to sanitize")
    san.add_argument("--k", type=int, default=7, help="neighbor count")
    san.add_argument(
        "--gamma", type=float, default=0.4, help="relabeling confidence threshold"
    )
    san.add_argument("--g", type=float, default=3.0, help="z-score deviation limit")
    san.add_argument("--distance", default="euclidean", choices=("euclidean", "manhattan"))
    san.add_argument("--out", required=True, help="sanitized dataset JSON")
    san.add_argument("--log", required=True, help="sanitization outcome JSON")
    san.set_defaults(func=_cmd_sanitize)

    train = sub.add_parser(
        "train", help="fit a model, optionally with FORT augmentation", formatter_class=fmt
    )
    train.add_argument("--model", required=True, choices=MODEL_KINDS)
    train.add_argument("--in", required=True, help="training dataset JSON")
    train.add_argument("--seed", type=int, required=True)
    train.add_argument("--out", required=True, help="model JSON")
    train.add_argument(
        "--hyperparams", default=None, help='JSON object, e.g. \'{"n_trees": 25}\''
    )
    train.add_argument("--fort", action="store_true", help="enable adversarial augmentation")
    train.add_argument("--c", type=float, default=0.01, help="perturbation constant")
    train.add_argument("--b", type=float, default=0.001, help="non-zero sign coefficient")
    train.add_argument("--tau", type=float, default=0.3, help="boundary-margin threshold")
    train.add_argument(
        "--q", type=float, default=0.1, help="augmentation fraction of the training set"
    )
    train.add_argument(
        "--importance-rows",
        type=int,
        default=None,
        help="cap permutation-importance rows (wide data)",
    )
    train.add_argument("--adv-out", default=None, help="write the augmented rows (audit)")
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser(
        "eval", help="score a model on a test set", formatter_class=fmt
    )
    ev.add_argument("--model", required=True, help="model JSON")
    ev.add_argument("--test", required=True, help="test dataset JSON")
    ev.add_argument("--record", default=None, help="poison record JSON (enables DR/CR)")
    ev.add_argument("--sanitize-log", default=None, help="sanitization outcome JSON")
    ev.add_argument("--out", default=None, help="metrics JSON")
    ev.set_defaults(func=_cmd_eval)

    matrix = sub.add_parser("matrix", help="run or resume the evaluation matrix")
    matrix_sub = matrix.add_subparsers(dest="mode", required=True)
    for mode in ("run", "resume"):
        mp = matrix_sub.add_parser(mode, formatter_class=fmt)
        mp.add_argument("--config", required=True, help="experiment spec JSON")
        mp.add_argument("--out", required=True, help="results directory")
        mp.add_argument("--workers", type=int, default=1)
        mp.set_defaults(func=_cmd_matrix, mode=mode)

    report = sub.add_parser(
        "report", help="summary tables or DR/CR bounds from a results directory",
        formatter_class=fmt,
    )
    report.add_argument("--in", required=True, help="results directory")
    report.add_argument("--format", default="csv", choices=("csv", "md"))
    report.add_argument(
        "--bounds", action="store_true", help="per-(model, dataset, attack) DR/CR bounds"
    )
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr
    )
    try:
        return args.func(args)
    except Exception as exc:
        print(f"poisonlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
