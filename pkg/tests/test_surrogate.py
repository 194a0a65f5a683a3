import numpy as np
import pytest

from lorapack import fixtures
from lorapack.surrogate import (
    FEATURE_NAMES,
    FeatureVector,
    LabeledSample,
    RuleTree,
    distill,
    evaluate,
    evaluate_rules,
    featurize,
    generate_dataset,
    load_dataset,
    load_model,
    macro_f1,
    predict_starvation,
    predict_throughput,
    sample_scenarios,
    save_dataset,
    save_model,
    smape,
    train_classifier,
    train_regressor,
    Scenario,
)
from lorapack.workload import AdapterSpec


def fv(rate_sum, n=4, a_max=8):
    return FeatureVector(
        n_adapters=n,
        rate_sum=rate_sum,
        rate_std=0.0,
        size_max=8.0,
        size_mean=8.0,
        size_std=0.0,
        a_max=a_max,
    )


def linear_dataset(n=120, seed=0, slope=100.0):
    """Noiseless samples whose throughput is a linear function of rate_sum."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        rate_sum = float(rng.uniform(0.1, 5.0))
        samples.append(
            LabeledSample(
                features=fv(rate_sum),
                throughput=slope * rate_sum,
                starved=rate_sum > 2.5,
                infeasible=False,
                key=f"k{i}",
                seed=i,
            )
        )
    return samples


class TestFeaturize:
    def test_two_adapter_example(self):
        adapters = [AdapterSpec("a", 8, 0.1), AdapterSpec("b", 16, 0.3)]
        v = featurize(adapters, 8)
        assert (
            v.n_adapters,
            v.rate_sum,
            v.rate_std,
            v.size_max,
            v.size_mean,
            v.size_std,
            v.a_max,
        ) == (2, pytest.approx(0.4), pytest.approx(0.1), 16, 12, 4, 8)

    def test_single_adapter_zero_std(self):
        v = featurize([AdapterSpec("a", 8, 0.2)], 4)
        assert v.rate_std == 0.0 and v.size_std == 0.0

    def test_permutation_invariant(self):
        adapters = [AdapterSpec(f"a{i}", 8 * (1 + i % 3), 0.1 * i) for i in range(6)]
        v1 = featurize(adapters, 8)
        v2 = featurize(list(reversed(adapters)), 8)
        assert v1 == v2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            featurize([], 8)


class TestMetrics:
    def test_smape_perfect(self):
        assert smape([100.0], [100.0]) == 0.0

    def test_smape_asymmetric_example(self):
        assert smape([150.0], [100.0]) == pytest.approx(40.0)

    def test_smape_zero_zero_term(self):
        assert smape([0.0, 100.0], [0.0, 100.0]) == 0.0

    def test_macro_f1_perfect(self):
        assert macro_f1([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            smape([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            evaluate([], [], "throughput")

    def test_evaluate_dispatch(self):
        assert evaluate([150.0], [100.0], "throughput") == pytest.approx(40.0)
        assert evaluate([1, 0], [1, 0], "starvation") == 1.0
        with pytest.raises(ValueError):
            evaluate([1.0], [1.0], "latency")


class TestGenerateDataset:
    def _scenario(self, rate=0.05, n=2, key="s0"):
        return Scenario(
            key=key,
            adapters=tuple(AdapterSpec(f"a{i}", 8, rate) for i in range(n)),
            duration=30.0,
            input_len_mean=250.0,
            output_len_mean=231.0,
            seed=7,
        )

    def test_cardinality(self):
        prof = fixtures.synthetic_profile()
        ds = generate_dataset([self._scenario()], [8, 32, 128], prof)
        assert len(ds) == 3

    def test_resume_idempotent(self):
        prof = fixtures.synthetic_profile()
        first = generate_dataset([self._scenario()], [8, 32], prof)
        again = generate_dataset([self._scenario()], [8, 32], prof, existing=first)
        assert again == first

    def test_zero_rate_not_starved(self):
        prof = fixtures.synthetic_profile()
        ds = generate_dataset([self._scenario(rate=0.0)], [8], prof)
        assert ds[0].throughput == 0.0
        assert ds[0].starved is False

    def test_infeasible_flagged(self):
        prof = fixtures.synthetic_profile()
        scenario = Scenario(
            key="big",
            adapters=tuple(AdapterSpec(f"a{i}", 32, 0.01) for i in range(2)),
            duration=30.0,
            input_len_mean=250.0,
            output_len_mean=231.0,
            seed=1,
        )
        ds = generate_dataset([scenario], [384], prof)
        assert ds[0].infeasible and ds[0].starved and ds[0].throughput == 0.0

    def test_feature_ranges_bounded_by_grid(self):
        rates = [3.2, 0.1, 0.003125]
        sizes = [8, 16, 32]
        scenarios = sample_scenarios(
            [4, 8], rates, sizes, reps=2, seed=0, duration=30.0,
            input_len_mean=250.0, output_len_mean=231.0,
        )
        for s in scenarios:
            for a in s.adapters:
                assert a.rate in rates and a.size in sizes


class TestTraining:
    def test_knn_memorizes_training_points(self):
        ds = linear_dataset()
        model = train_regressor(ds, kind="knn", budget=2, seed=0)
        preds = [predict_throughput(model, s.features) for s in ds]
        actuals = [s.throughput for s in ds]
        assert smape(preds, actuals) == pytest.approx(0.0, abs=1e-9)

    def test_separable_labels_perfect_f1(self):
        ds = linear_dataset(n=200)
        model = train_classifier(ds, kind="rf", budget=4, seed=0)
        holdout = linear_dataset(n=60, seed=99)
        preds = [predict_starvation(model, s.features) for s in holdout]
        actuals = [s.starved for s in holdout]
        assert macro_f1(preds, actuals) == 1.0

    def test_constant_target_warns(self):
        ds = [
            LabeledSample(fv(float(i)), 5.0, False, False, f"k{i}", i)
            for i in range(60)
        ]
        with pytest.warns(UserWarning):
            model = train_regressor(ds, kind="rf", budget=2, seed=0)
        assert predict_throughput(model, fv(1.0)) == 5.0

    def test_single_class_warns(self):
        ds = [
            LabeledSample(fv(float(i)), float(i), False, False, f"k{i}", i)
            for i in range(60)
        ]
        with pytest.warns(UserWarning):
            model = train_classifier(ds, kind="rf", budget=2, seed=0)
        assert predict_starvation(model, fv(1.0)) is False

    def test_deterministic_selection(self):
        ds = linear_dataset(n=150, seed=4)
        m1 = train_regressor(ds, kind="rf", budget=4, seed=3)
        m2 = train_regressor(ds, kind="rf", budget=4, seed=3)
        assert m1.cv_report["best_params"] == m2.cv_report["best_params"]

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            train_regressor(linear_dataset(n=10), kind="rf")


class TestPrediction:
    def test_clamped_nonnegative(self):
        ds = linear_dataset()
        model = train_regressor(ds, kind="knn", budget=2, seed=0)
        assert predict_throughput(model, fv(0.0001)) >= 0.0

    def test_task_mismatch_rejected(self):
        model = train_regressor(linear_dataset(), kind="knn", budget=2, seed=0)
        with pytest.raises(ValueError):
            predict_starvation(model, fv(1.0))

    def test_schema_mismatch_rejected(self):
        model = train_regressor(linear_dataset(), kind="knn", budget=2, seed=0)
        model.feature_names = ("other",)
        with pytest.raises(ValueError):
            predict_throughput(model, fv(1.0))

    def test_batch_equals_singles(self):
        ds = linear_dataset()
        model = train_regressor(ds, kind="rf", budget=2, seed=0)
        X = np.array([s.features.to_array() for s in ds[:10]])
        batch = model.predict(X)
        singles = [model.predict_one(s.features) for s in ds[:10]]
        assert np.allclose(batch, singles)


class TestDistill:
    def test_rule_budget_respected(self):
        ds = linear_dataset(n=300, seed=2)
        teacher = train_regressor(ds, kind="rf", budget=2, seed=0)
        student, report = distill(teacher, ds, "throughput", budget=32)
        assert student.estimator.rule_count <= 32
        assert report["rule_count"] <= 32

    def test_constant_teacher_single_rule(self):
        ds = [
            LabeledSample(fv(float(i)), 5.0, False, False, f"k{i}", i)
            for i in range(60)
        ]
        with pytest.warns(UserWarning):
            teacher = train_regressor(ds, kind="rf", budget=2, seed=0)
        student, _ = distill(teacher, ds, "throughput", budget=32)
        assert student.estimator.rule_count == 1

    def test_budget_below_two_rejected(self):
        ds = linear_dataset()
        teacher = train_regressor(ds, kind="knn", budget=2, seed=0)
        with pytest.raises(ValueError):
            distill(teacher, ds, "throughput", budget=1)

    def test_rule_extraction_lossless(self):
        ds = linear_dataset(n=300, seed=5)
        teacher = train_regressor(ds, kind="rf", budget=2, seed=0)
        student, _ = distill(teacher, ds, "throughput", budget=16)
        tree = student.estimator
        rng = np.random.default_rng(0)
        X = np.column_stack(
            [
                rng.integers(1, 100, 2000),
                rng.uniform(0, 10, 2000),
                rng.uniform(0, 3, 2000),
                rng.choice([8, 16, 32], 2000),
                rng.uniform(8, 32, 2000),
                rng.uniform(0, 12, 2000),
                rng.choice([8, 32, 128, 384], 2000),
            ]
        ).astype(float)
        direct = tree.predict(X)
        via_rules = evaluate_rules(tree.rules(), X, "throughput")
        assert np.array_equal(direct, via_rules)

    def test_classifier_distillation(self):
        ds = linear_dataset(n=300, seed=6)
        teacher = train_classifier(ds, kind="rf", budget=4, seed=0)
        student, report = distill(teacher, ds, "starvation", budget=32)
        assert student.estimator.rule_count <= 32
        assert report["macro_f1_vs_teacher"] >= 0.95


class TestFiles:
    def test_dataset_round_trip(self, tmp_path):
        ds = linear_dataset(n=60)
        path = tmp_path / "ds.csv"
        save_dataset(ds, path, meta={"seed": 0})
        back = load_dataset(path)
        assert back == ds

    def test_model_round_trip_joblib(self, tmp_path):
        ds = linear_dataset()
        model = train_regressor(ds, kind="knn", budget=2, seed=0)
        path = tmp_path / "model.joblib"
        save_model(model, path)
        back = load_model(path)
        assert back.task == "throughput" and back.kind == "knn"
        assert predict_throughput(back, fv(1.0)) == pytest.approx(
            predict_throughput(model, fv(1.0))
        )

    def test_model_round_trip_rules(self, tmp_path):
        ds = linear_dataset(n=200, seed=1)
        teacher = train_regressor(ds, kind="rf", budget=2, seed=0)
        student, _ = distill(teacher, ds, "throughput", budget=8)
        path = tmp_path / "rules.json"
        save_model(student, path)
        back = load_model(path)
        assert isinstance(back.estimator, RuleTree)
        assert predict_throughput(back, fv(1.0)) == pytest.approx(
            predict_throughput(student, fv(1.0))
        )

    def test_rule_export_format(self):
        ds = linear_dataset(n=200, seed=1)
        teacher = train_regressor(ds, kind="rf", budget=2, seed=0)
        student, _ = distill(teacher, ds, "throughput", budget=8)
        text = student.estimator.export_rules()
        lines = [l for l in text.strip().splitlines() if l]
        assert len(lines) == student.estimator.rule_count
        assert all("->" in l for l in lines)
        assert any(name in text for name in FEATURE_NAMES)
