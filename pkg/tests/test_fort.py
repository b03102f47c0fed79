import numpy as np
import pytest

from poisonlab import (
    Dataset,
    FortConfig,
    build_adversarial_rows,
    feature_importance,
    fit,
    fort_fit,
    margins,
    perturb,
    predict,
    select_augmentation_points,
    synth_blobs,
)
from poisonlab.data import round_half_up

from .oracles import brute_margin


class _StubModel:
    """Duck-typed model returning fixed class probabilities."""

    kind = "stub"

    def __init__(self, proba):
        self.proba = np.asarray(proba, dtype=np.float64)
        self.feature_count = 1
        self.class_count = self.proba.shape[1]

    def predict_proba(self, X):
        return self.proba[: len(X)]

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


def _dataset_of(n, d=1):
    return Dataset(np.zeros((n, d)), np.arange(n) % 2, 2)


class TestMargins:
    def test_point_nine_point_one(self):
        model = _StubModel([[0.9, 0.1]])
        assert margins(model, _dataset_of(1))[0] == pytest.approx(0.8)

    def test_uniform_gives_zero(self):
        model = _StubModel([[0.25, 0.25, 0.25, 0.25]])
        assert margins(model, _dataset_of(1))[0] == pytest.approx(0.0)

    def test_matches_top_two_scan(self):
        rng = np.random.default_rng(7)
        raw = rng.uniform(0, 1, (100, 5))
        proba = raw / raw.sum(axis=1, keepdims=True)
        model = _StubModel(proba)
        got = margins(model, _dataset_of(100))
        expected = [brute_margin(row) for row in proba]
        assert np.allclose(got, expected)


class TestPerturb:
    def test_zero_importance_moves_up(self):
        cfg = FortConfig()
        out = perturb(np.array([5.0]), np.array([0.0]), cfg)
        # sign(0 * 5 + 0.001) = +1
        assert out[0] == pytest.approx(5.01)

    def test_negative_product_moves_down(self):
        cfg = FortConfig()
        out = perturb(np.array([-1.0]), np.array([0.5]), cfg)
        # sign(-0.5 + 0.001) = -1
        assert out[0] == pytest.approx(-1.01)

    def test_vector_case(self):
        cfg = FortConfig(c=0.01, b=0.001)
        out = perturb(np.array([1.0, -1.0]), np.array([0.2, 0.8]), cfg)
        assert np.allclose(out, [1.01, -1.01])

    def test_every_coordinate_moves_by_c(self):
        rng = np.random.default_rng(3)
        cfg = FortConfig()
        for _ in range(200):
            d = int(rng.integers(1, 12))
            x = rng.normal(0, 2, d)
            raw = rng.uniform(0, 1, d)
            F = raw / raw.sum()
            out = perturb(x, F, cfg)
            # bit-exact agreement with an independent sign scan
            steps = np.array([cfg.c if F[j] * x[j] + cfg.b >= 0 else -cfg.c for j in range(d)])
            assert np.all(out == x + steps)
            # the recovered delta matches c up to one addition rounding
            assert np.max(np.abs(np.abs(out - x) - cfg.c)) < 1e-15

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            perturb(np.zeros(3), np.zeros(2), FortConfig())


class TestSelection:
    def test_separated_blobs_select_nothing(self):
        ds = synth_blobs(3, 40, 2, 0.05, seed=2)
        model = fit("gnb", ds, None, seed=0)
        F = feature_importance(model, ds, seed=0)
        assert margins(model, ds).min() > 0.3
        assert select_augmentation_points(ds, model, F, FortConfig(tau=0.3)) == []

    def test_tau_one_takes_top_q_by_weighted_mass(self):
        ds = synth_blobs(3, 40, 2, 0.4, seed=5)
        model = fit("gnb", ds, None, seed=0)
        F = feature_importance(model, ds, seed=0)
        selected = select_augmentation_points(ds, model, F, FortConfig(tau=1.0, q=0.1))
        assert len(selected) == round_half_up(0.1 * ds.n)
        scores = np.abs(ds.features) @ F
        cutoff = min(scores[selected])
        others = [i for i in range(ds.n) if i not in selected]
        assert all(scores[i] <= cutoff + 1e-12 for i in others)

    def test_tau_and_q_one_select_everything(self):
        ds = synth_blobs(2, 25, 3, 0.4, seed=8)
        model = fit("gnb", ds, None, seed=0)
        F = feature_importance(model, ds, seed=0)
        selected = select_augmentation_points(ds, model, F, FortConfig(tau=1.0, q=1.0))
        assert sorted(selected) == list(range(ds.n))


class TestFortFit:
    def test_budget_and_labels(self, iris_ds):
        from poisonlab import split, standardize_apply, standardize_fit

        train, _ = split(iris_ds, 0.75, seed=0)
        train = standardize_apply(train, standardize_fit(train))
        assert train.n == 113
        model, adv_count = fort_fit("gnb", train, None, FortConfig(), seed=0)
        assert adv_count <= round_half_up(0.1 * 113)
        prelim = fit("gnb", train, None, seed=0)
        F = feature_importance(prelim, train, seed=0)
        selected, adv = build_adversarial_rows(train, prelim, F, FortConfig())
        assert len(selected) == adv_count
        # augmented rows keep their source labels
        assert list(train.labels[selected]) == [int(train.labels[i]) for i in selected]
        assert np.max(np.abs(np.abs(adv - train.features[selected]) - FortConfig().c)) < 1e-15

    def test_empty_selection_returns_plain_fit(self):
        ds = synth_blobs(3, 40, 2, 0.05, seed=2)
        model, adv_count = fort_fit("gnb", ds, None, FortConfig(tau=0.3), seed=0)
        assert adv_count == 0
        plain = fit("gnb", ds, None, seed=0)
        probe = np.random.default_rng(0).normal(0, 2, (20, 2))
        assert np.array_equal(predict(model, probe), predict(plain, probe))

    @pytest.mark.parametrize("kind", ["dt", "gnb", "mlp"])
    def test_deterministic(self, kind):
        ds = synth_blobs(3, 30, 2, 0.8, seed=4)
        hp = {"epochs": 40} if kind == "mlp" else None
        probe = np.random.default_rng(1).normal(0, 2, (25, 2))
        a, na = fort_fit(kind, ds, hp, FortConfig(tau=1.0), seed=6)
        b, nb = fort_fit(kind, ds, hp, FortConfig(tau=1.0), seed=6)
        assert na == nb
        assert np.array_equal(predict(a, probe), predict(b, probe))


class TestConfigValidation:
    def test_ranges(self):
        with pytest.raises(ValueError):
            FortConfig(c=0.0)
        with pytest.raises(ValueError):
            FortConfig(b=0.0)
        with pytest.raises(ValueError):
            FortConfig(tau=0.0)
        with pytest.raises(ValueError):
            FortConfig(q=1.5)
        with pytest.raises(ValueError):
            FortConfig(importance_rows=0)
