import json
from pathlib import Path

import pytest

from poisonlab import (
    Cell,
    DatasetSpec,
    ExperimentSpec,
    ModelSpec,
    bounds_table,
    plan_cells,
    run_cell,
    run_matrix,
    summarize,
)
from poisonlab.harness import (
    cell_content_hash,
    load_results,
    render_bounds_csv,
    render_summary_csv,
)


def _blob_spec(**overrides):
    base = dict(
        datasets=(
            DatasetSpec(
                name="blobs",
                format="synth_blobs",
                class_count=3,
                per_class=40,
                dims=2,
                spread=0.6,
                blob_seed=7,
            ),
        ),
        models=(ModelSpec("dt"), ModelSpec("gnb")),
        attacks=("rlpa", "oop"),
        levels=(0.1, 0.2),
        seeds=(0, 1),
        variants=("poisoned_baseline", "sanitize_only"),
    )
    base.update(overrides)
    return ExperimentSpec(**base)


def _strip_wall_time(path):
    lines = []
    for line in Path(path).read_text().splitlines():
        doc = json.loads(line)
        doc.pop("wall_time_seconds")
        lines.append(json.dumps(doc, sort_keys=True))
    return lines


class TestPlanCells:
    def test_cartesian_arithmetic(self, iris_path):
        spec = ExperimentSpec(
            datasets=(DatasetSpec(name="iris", format="iris_csv", path=str(iris_path)),),
            models=tuple(ModelSpec(k) for k in ("dt", "rf", "gnb", "mlp")),
            attacks=("rlpa", "subp", "oop"),
            levels=(0.1, 0.15, 0.2),
            seeds=(0, 1, 2, 3, 4),
            variants=(
                "poisoned_baseline",
                "sanitize_only",
                "fort_only",
                "securelearn_full",
            ),
        )
        cells = plan_cells(spec)
        assert len(cells) == 720

    def test_order_independent_of_spec_list_order(self):
        a = _blob_spec()
        b = _blob_spec(
            models=(ModelSpec("gnb"), ModelSpec("dt")),
            attacks=("oop", "rlpa"),
            levels=(0.2, 0.1),
            seeds=(1, 0),
            variants=("sanitize_only", "poisoned_baseline"),
        )
        cells_a = plan_cells(a)
        cells_b = plan_cells(b)
        assert cells_a == cells_b
        assert [cell_content_hash(a, c) for c in cells_a] == [
            cell_content_hash(b, c) for c in cells_b
        ]

    def test_clean_baseline_has_no_attack_axis(self):
        spec = _blob_spec(variants=("clean_baseline", "poisoned_baseline"))
        cells = plan_cells(spec)
        clean = [c for c in cells if c.variant == "clean_baseline"]
        assert len(clean) == 2 * 2  # models x seeds
        assert all(c.attack == "none" and c.delta_l == 0.0 for c in clean)

    def test_duplicate_seeds_rejected(self):
        with pytest.raises(ValueError, match="duplicate seeds"):
            _blob_spec(seeds=(0, 0))

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="empty"):
            _blob_spec(attacks=())
        with pytest.raises(ValueError, match="level"):
            _blob_spec(levels=(0.0,))
        with pytest.raises(ValueError, match="unknown variant"):
            _blob_spec(variants=("defend_harder",))
        with pytest.raises(ValueError, match="unknown attack"):
            _blob_spec(attacks=("ddos",))

    def test_spec_json_round_trip(self):
        spec = _blob_spec()
        back = ExperimentSpec.from_json(json.loads(json.dumps(spec.to_json())))
        assert back == spec

    def test_spec_version_required(self):
        doc = _blob_spec().to_json()
        doc.pop("spec_version")
        with pytest.raises(ValueError, match="spec_version"):
            ExperimentSpec.from_json(doc)

    def test_shipped_iris_config_parses(self):
        path = Path(__file__).parent.parent / "configs" / "iris_matrix.json"
        spec = ExperimentSpec.from_json(json.loads(path.read_text()))
        assert len(plan_cells(spec)) == 720


class TestRunCell:
    def test_variant_metric_shape(self):
        spec = _blob_spec(
            variants=("poisoned_baseline", "sanitize_only", "fort_only", "securelearn_full")
        )
        results = {}
        for variant in spec.variants:
            cell = Cell("blobs", "dt", "rlpa", 0.2, 0, variant)
            results[variant] = run_cell(spec, cell)
        for variant, result in results.items():
            assert result.error is None, result.error
            bundle = result.metrics
            assert 0.0 <= bundle.accuracy <= 1.0
            if variant in ("sanitize_only", "securelearn_full"):
                assert bundle.detection_rate is not None
                assert bundle.correction_rate is not None
                assert result.sanitization is not None
            else:
                assert bundle.detection_rate is None
                assert bundle.correction_rate is None
        assert results["securelearn_full"].adv_count is not None

    def test_clean_baseline_has_no_record(self):
        spec = _blob_spec(variants=("clean_baseline",))
        result = run_cell(spec, Cell("blobs", "gnb", "none", 0.0, 0, "clean_baseline"))
        assert result.error is None
        assert result.poison_record is None
        assert result.metrics.detection_rate is None

    def test_clean_iris_rf_accuracy_floor(self, iris_path):
        spec = ExperimentSpec(
            datasets=(DatasetSpec(name="iris", format="iris_csv", path=str(iris_path)),),
            models=(ModelSpec("rf", {"n_trees": 50}),),
            variants=("clean_baseline",),
            seeds=(0, 1, 2, 3, 4),
        )
        for seed in spec.seeds:
            result = run_cell(spec, Cell("iris", "rf", "none", 0.0, seed, "clean_baseline"))
            assert result.error is None
            assert result.metrics.accuracy >= 0.90

    def test_stage_error_is_captured(self):
        # 3 rows per class: sanitize needs n > k=7 but the train split has 7
        spec = _blob_spec(
            datasets=(
                DatasetSpec(
                    name="tiny",
                    format="synth_blobs",
                    class_count=3,
                    per_class=3,
                    dims=2,
                    spread=0.3,
                    blob_seed=1,
                ),
            ),
            variants=("sanitize_only",),
        )
        result = run_cell(spec, Cell("tiny", "dt", "rlpa", 0.2, 0, "sanitize_only"))
        assert result.error is not None
        assert result.metrics is None

    def test_upstream_data_shared_across_variants(self):
        spec = _blob_spec(
            variants=("poisoned_baseline", "sanitize_only", "fort_only", "securelearn_full")
        )
        records = []
        for variant in ("poisoned_baseline", "fort_only"):
            result = run_cell(spec, Cell("blobs", "dt", "rlpa", 0.2, 1, variant))
            records.append(result.poison_record)
        assert records[0] == records[1]


class TestRunMatrix:
    def test_deterministic_across_runs_and_workers(self, tmp_path):
        spec = _blob_spec()
        run_matrix(spec, tmp_path / "a", workers=1)
        run_matrix(spec, tmp_path / "b", workers=1)
        run_matrix(spec, tmp_path / "c", workers=2)
        a = _strip_wall_time(tmp_path / "a" / "results.jsonl")
        b = _strip_wall_time(tmp_path / "b" / "results.jsonl")
        c = _strip_wall_time(tmp_path / "c" / "results.jsonl")
        assert a == b == c

    def test_cache_hit_reuses_results_byte_identically(self, tmp_path):
        spec = _blob_spec()
        run_matrix(spec, tmp_path, workers=1)
        first = (tmp_path / "results.jsonl").read_bytes()
        results = run_matrix(spec, tmp_path, workers=1)
        assert (tmp_path / "results.jsonl").read_bytes() == first
        assert len(results) == len(plan_cells(spec))

    def test_interrupt_and_resume(self, tmp_path):
        spec = _blob_spec()
        run_matrix(spec, tmp_path, workers=1)
        full = _strip_wall_time(tmp_path / "results.jsonl")
        lines = (tmp_path / "results.jsonl").read_text().splitlines()
        (tmp_path / "results.jsonl").write_text("\n".join(lines[:5]) + "\n")
        run_matrix(spec, tmp_path, workers=1)
        assert _strip_wall_time(tmp_path / "results.jsonl") == full

    def test_corrupt_tail_recomputed(self, tmp_path):
        spec = _blob_spec()
        run_matrix(spec, tmp_path, workers=1)
        full = _strip_wall_time(tmp_path / "results.jsonl")
        lines = (tmp_path / "results.jsonl").read_text().splitlines()
        lines[3] = lines[3][: len(lines[3]) // 2]  # half a JSON document
        (tmp_path / "results.jsonl").write_text("\n".join(lines) + "\n")
        run_matrix(spec, tmp_path, workers=1)
        assert _strip_wall_time(tmp_path / "results.jsonl") == full

    def test_config_change_invalidates_cache(self, tmp_path):
        spec = _blob_spec()
        run_matrix(spec, tmp_path, workers=1)
        changed = _blob_spec(master_seed=99)
        results = run_matrix(changed, tmp_path, workers=1)
        assert all(r.content_hash == cell_content_hash(changed, c)
                   for r, c in zip(results, plan_cells(changed)))


@pytest.fixture(scope="module")
def results(tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix")
    run_matrix(_blob_spec(), out, workers=2)
    return load_results(out)


class TestSummaries:
    def test_summary_groups_and_columns(self, results):
        rows = summarize(results)
        keys = {(r.dataset, r.model, r.attack, r.delta_l, r.variant) for r in rows}
        assert len(keys) == 2 * 2 * 2 * 2  # models x attacks x levels x variants
        for row in rows:
            assert row.n_seeds == 2
        csv = render_summary_csv(rows)
        assert csv.splitlines()[0] == "dataset,model,attack,delta_l,variant,metric,mean,std,n_seeds"

    def test_bounds_match_brute_min_max(self, results):
        rows = bounds_table(results)
        for row in rows:
            drs = [
                r.metrics.detection_rate
                for r in results
                if r.model == row.model
                and r.dataset == row.dataset
                and r.attack == row.attack
                and r.metrics is not None
                and r.metrics.detection_rate is not None
            ]
            assert row.dr_lb == min(drs)
            assert row.dr_ub == max(drs)
        csv = render_bounds_csv(rows)
        assert csv.splitlines()[0] == "model,dataset,attack,dr_lb,dr_ub,cr_lb,cr_ub"

    def test_single_seed_single_level_bounds_collapse(self, tmp_path):
        spec = _blob_spec(seeds=(3,), levels=(0.15,), variants=("sanitize_only",))
        results = run_matrix(spec, tmp_path, workers=1)
        for row in bounds_table(results):
            assert row.dr_lb == row.dr_ub
            assert row.cr_lb == row.cr_ub

    def test_errored_cells_excluded_and_flagged(self, tmp_path):
        spec = _blob_spec(
            datasets=(
                DatasetSpec(
                    name="tiny",
                    format="synth_blobs",
                    class_count=3,
                    per_class=3,
                    dims=2,
                    spread=0.3,
                    blob_seed=1,
                ),
            ),
            models=(ModelSpec("dt"),),
            attacks=("rlpa",),
            levels=(0.2,),
            variants=("sanitize_only",),
        )
        results = run_matrix(spec, tmp_path, workers=1)
        assert all(r.error is not None for r in results)
        rows = summarize(results)
        assert len(rows) == 1
        assert rows[0].metric == "errored_cells"
        assert rows[0].mean == len(results)
