import math
import warnings

import numpy as np
import pytest
from scipy.special import expit, logit

from driftcard import models
from driftcard.models import (
    LogisticConfig,
    ModelError,
    MonthlyEnsemble,
    Stump,
    StumpEnsemble,
    clean_and_retrain,
    forward_select,
    logistic_standard_errors,
    model_from_text,
    model_to_text,
    monthly_ensemble,
    train_adaboost,
    train_logistic,
)
from driftcard.synthgen import generate_logistic_design


class MatrixScorer:
    """Record-level adapter for matrix models used by strategy ops."""

    def __init__(self, model):
        self.model = model

    def score(self, records):
        return self.model.predict(np.asarray(records, dtype=float))


def matrix_trainer(records, labels):
    X = np.asarray(records, dtype=float)
    return MatrixScorer(train_logistic(X, labels, LogisticConfig()))


class TestTrainLogistic:
    def test_saturated_binary_feature_closed_form(self):
        rng = np.random.Generator(np.random.Philox(1))
        x = (rng.random(4000) < 0.4).astype(float)
        p = np.where(x == 1, 0.42, 0.18)
        y = (rng.random(4000) < p).astype(int)
        model = train_logistic(x[:, None], y, LogisticConfig())
        p1 = y[x == 1].mean()
        p0 = y[x == 0].mean()
        expected = logit(p1) - logit(p0)
        assert model.weights[0] * 1.0 == pytest.approx(expected, abs=1e-4)

    def test_independent_feature_weight_near_zero(self):
        rng = np.random.Generator(np.random.Philox(2))
        n = 50_000
        X = rng.normal(0, 1, (n, 2))
        p = expit(-1.0 + 0.8 * X[:, 0])  # second column pure noise
        y = (rng.random(n) < p).astype(int)
        model = train_logistic(X, y, LogisticConfig())
        se = logistic_standard_errors(model, X)
        assert abs(model.weights[1]) < 3 * se[2]

    def test_coefficient_recovery(self):
        beta = [0.8, -0.5, 0.3, 0.0, -0.2]
        X, y = generate_logistic_design(50_000, -1.0, beta, seed=5)
        model = train_logistic(X, y, LogisticConfig())
        assert np.all(np.abs(model.weights - np.array(beta)) < 0.05)
        assert abs(model.intercept + 1.0) < 0.05
        assert model.gradient_norm <= 1e-8

    def test_loglik_nondecreasing(self):
        X, y = generate_logistic_design(5000, -0.5, [1.0, -1.0], seed=7)
        model = train_logistic(X, y, LogisticConfig())
        trace = model.ll_trace
        # monotone up to the line search's float-resolution slack
        assert all(b >= a - 1e-9 * (1 + abs(a)) for a, b in zip(trace, trace[1:]))

    def test_mean_prediction_equals_bad_rate(self):
        X, y = generate_logistic_design(20_000, -1.0, [0.6, -0.4], seed=9)
        model = train_logistic(X, y, LogisticConfig())
        assert abs(model.predict(X).mean() - y.mean()) <= 1e-6

    def test_perfect_separation_converges_with_min_ridge(self):
        x = np.concatenate([np.full(50, -1.0), np.full(50, 1.0)])
        y = np.array([0] * 50 + [1] * 50)
        model = train_logistic(x[:, None], y, LogisticConfig(max_iterations=200))
        assert np.isfinite(model.weights).all()
        assert model.gradient_norm <= 1e-8

    def test_single_class_errors(self):
        with pytest.raises(ModelError):
            train_logistic(np.ones((5, 1)), np.ones(5), LogisticConfig())

    def test_nonconvergence_carries_gradient_norm(self):
        X, y = generate_logistic_design(2000, 0.0, [2.0], seed=11)
        with pytest.raises(models.ConvergenceError) as err:
            train_logistic(X, y, LogisticConfig(max_iterations=1, tolerance=1e-14))
        assert math.isfinite(err.value.gradient_norm)

    def test_deterministic(self):
        X, y = generate_logistic_design(3000, -1.0, [0.5, 0.5], seed=13)
        a = train_logistic(X, y, LogisticConfig())
        b = train_logistic(X, y, LogisticConfig())
        assert a.intercept == b.intercept
        assert np.array_equal(a.weights, b.weights)

    def test_intercept_only(self):
        y = np.array([0] * 70 + [1] * 30)
        model = train_logistic(np.empty((100, 0)), y, LogisticConfig())
        assert model.predict(np.empty((100, 0))).mean() == pytest.approx(0.3, abs=1e-9)


class TestPredict:
    def test_base_rate_intercept(self):
        model = models.LogisticModel(float(logit(0.273)), np.zeros(3), ("a", "b", "c"))
        out = model.predict(np.zeros((1, 3)))
        assert out[0] == pytest.approx(0.273, abs=1e-12)

    def test_all_zero_gives_half(self):
        model = models.LogisticModel(0.0, np.zeros(2), ("a", "b"))
        assert model.predict(np.zeros((1, 2)))[0] == 0.5

    def test_monotone_in_positive_weight(self):
        model = models.LogisticModel(0.0, np.array([1.5, -0.5]), ("a", "b"))
        lo = model.predict(np.array([[0.0, 0.3]]))[0]
        hi = model.predict(np.array([[1.0, 0.3]]))[0]
        assert hi > lo

    def test_strictly_inside_unit_interval(self):
        model = models.LogisticModel(0.0, np.array([100.0]), ("a",))
        big = model.predict(np.array([[50.0], [-50.0]]))
        assert 0.0 < big[0] < 1.0 and 0.0 < big[1] < 1.0

    def test_dimension_mismatch(self):
        model = models.LogisticModel(0.0, np.zeros(2), ("a", "b"))
        with pytest.raises(ModelError):
            model.predict(np.zeros((4, 3)))


def stump_data(seed=3, n=2000):
    rng = np.random.Generator(np.random.Philox(seed))
    X = rng.normal(0, 1, (n, 4))
    logits = 1.3 * (X[:, 0] > 0.2) + 0.9 * (X[:, 1] > -0.5) - 1.8
    y = (rng.random(n) < expit(logits)).astype(int)
    return X, y


class TestAdaBoost:
    def test_perfect_stump_zero_training_error(self):
        X = np.concatenate([np.zeros(40), np.ones(60)])[:, None]
        y = np.array([0] * 40 + [1] * 60)
        model = train_adaboost(X, y, rounds=1)
        pred = (model.decision(X) > 0).astype(int)
        assert (pred == y).mean() == 1.0

    def test_weights_sum_to_one_every_round(self):
        X, y = stump_data()
        model = train_adaboost(X, y, rounds=25)
        assert len(model.weight_sums) == len(model.rounds)
        assert all(abs(s - 1.0) <= 1e-12 for s in model.weight_sums)

    def test_round_errors_below_half(self):
        X, y = stump_data(seed=5)
        model = train_adaboost(X, y, rounds=25)
        assert all(err < 0.5 for _, _, err in model.rounds)

    def test_boosting_bound(self):
        X, y = stump_data(seed=7)
        model = train_adaboost(X, y, rounds=30)
        pred = (model.decision(X) > 0).astype(int)
        training_error = float((pred != y).mean())
        bound = 1.0
        for _, _, err in model.rounds:
            bound *= 2.0 * math.sqrt(err * (1.0 - err))
        assert training_error <= bound + 1e-12

    def test_no_useful_stump_errors(self):
        # the only cut has weighted error exactly 0.5 for both polarities
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        y = np.array([0, 1, 0, 1])
        with pytest.raises(ModelError):
            train_adaboost(X, y, rounds=3)

    def test_probability_range_and_rounds_validation(self):
        X, y = stump_data(seed=9, n=500)
        model = train_adaboost(X, y, rounds=10)
        p = model.predict(X)
        assert ((p > 0) & (p < 1)).all()
        with pytest.raises(ModelError):
            train_adaboost(X, y, rounds=0)


class TestForwardSelect:
    def test_stub_selection_and_stop(self):
        auc_by_subset = {
            (): 0.5,
            ("a",): 0.70, ("b",): 0.65, ("c",): 0.55,
            ("a", "b"): 0.72, ("a", "c"): 0.70,
            ("a", "b", "c"): 0.715,
        }

        def evaluate(names):
            return auc_by_subset[tuple(sorted(names))]

        selected, trace = forward_select(["a", "b", "c"], evaluate)
        assert selected == ["a", "b"]
        assert [s.added for s in trace] == ["a", "b"]
        assert trace[0].improvement == pytest.approx(0.20)

    def test_tie_broken_by_iv_then_name(self):
        def evaluate(names):
            return 0.6 if len(names) == 1 else 0.6  # all equal, no second gain

        selected, _ = forward_select(
            ["b", "a"], evaluate, iv_by_name={"a": 0.1, "b": 0.3}
        )
        assert selected == ["b"]  # higher IV wins the tie

        selected, _ = forward_select(["b", "a"], evaluate)
        assert selected == ["a"]  # equal IV: name order

    def test_empty_candidates(self):
        selected, trace = forward_select([], lambda names: 0.9)
        assert selected == [] and trace == []

    def test_epsilon_stop(self):
        def evaluate(names):
            return 0.5 + 0.001 * len(names)

        selected, _ = forward_select(["a", "b"], evaluate, epsilon=0.01)
        assert selected == []


class TestCleanAndRetrain:
    def data(self, seed=15):
        rng = np.random.Generator(np.random.Philox(seed))
        X = rng.normal(0, 1, (3000, 2))
        y = (rng.random(3000) < expit(-1.0 + 1.4 * X[:, 0])).astype(int)
        # contaminate: flip a handful of extreme records
        flip = np.argsort(X[:, 0])[-25:]
        y[flip] = 0
        return X, y

    def test_threshold_zero_returns_plain_model_object(self):
        X, y = self.data()
        model, removed = clean_and_retrain(matrix_trainer, X, y, threshold=0.0)
        plain = matrix_trainer(X, y)
        assert removed == []
        assert np.array_equal(model.model.weights, plain.model.weights)
        assert model.model.intercept == plain.model.intercept

    def test_removal_set_matches_definition(self):
        X, y = self.data()
        model, removed = clean_and_retrain(matrix_trainer, X, y, threshold=0.05)
        first = matrix_trainer(X, y)
        p = first.score(X)
        p_true = np.where(y == 1, p, 1 - p)
        expected = set(np.flatnonzero(p_true < 0.05).tolist())
        assert set(removed) == expected
        assert expected  # the contamination must actually trigger removals

    def test_no_removals_returns_first_model(self):
        rng = np.random.Generator(np.random.Philox(17))
        X = rng.normal(0, 1, (500, 1))
        y = (rng.random(500) < 0.5).astype(int)  # noise: no confident errors
        model, removed = clean_and_retrain(matrix_trainer, X, y, threshold=0.05)
        assert removed == []

    def test_abort_when_class_would_empty(self):
        X = np.concatenate([np.full(80, -2.0), np.full(3, 2.0)])[:, None]
        y = np.array([0] * 80 + [1] * 3)

        class Extreme:
            def score(self, records):
                return np.full(len(records), 1e-6)  # every bad looks impossible

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model, removed = clean_and_retrain(lambda r, l: Extreme(), X, y, 0.05)
        assert removed == []
        assert any("abort" in str(w.message) for w in caught)

    def test_threshold_validation(self):
        X, y = self.data()
        with pytest.raises(ModelError):
            clean_and_retrain(matrix_trainer, X, y, threshold=0.5)


class TestMonthlyEnsemble:
    def test_routing_by_month(self):
        class Constant:
            def __init__(self, value):
                self.value = value

            def score(self, records):
                return np.full(len(records), self.value)

        records = list(range(36))
        months = [(i % 12) + 1 for i in records]
        labels = [(i // 12) % 2 for i in records]
        bundle = monthly_ensemble(
            records, labels, months,
            lambda recs, ys: Constant(months[recs[0]] / 100.0),
        )
        out = bundle.score([0, 1, 2], [3, 1, 12])
        assert out.tolist() == [0.03, 0.01, 0.12]

    def test_identical_data_gives_identical_models(self):
        rng = np.random.Generator(np.random.Philox(19))
        base_X = rng.normal(0, 1, (40, 1))
        base_y = (rng.random(40) < expit(base_X[:, 0])).astype(int)
        records = np.tile(base_X, (12, 1))
        labels = np.tile(base_y, 12)
        months = np.repeat(np.arange(1, 13), 40)
        bundle = monthly_ensemble(records, labels, months, matrix_trainer)
        weights = [bundle.models[m].model.weights[0] for m in range(1, 13)]
        assert len(set(weights)) == 1

    def test_missing_class_names_month(self):
        records = list(range(24))
        months = [(i % 12) + 1 for i in records]
        labels = [1] * 24
        labels[0] = 0  # month 1 has both classes, others do not
        with pytest.raises(ModelError, match="month 2"):
            monthly_ensemble(records, labels, months, lambda recs, ys: object())

    def test_average_combine(self):
        class Constant:
            def __init__(self, value):
                self.value = value

            def score(self, records):
                return np.full(len(records), self.value)

        bundle = MonthlyEnsemble(
            models={m: Constant(m / 100) for m in range(1, 13)}, combine="average"
        )
        out = bundle.score([0], [5])
        assert out[0] == pytest.approx(np.mean([m / 100 for m in range(1, 13)]))


class TestModelIO:
    def test_logistic_roundtrip_exact(self):
        X, y = generate_logistic_design(2000, -0.7, [0.123456789012345, -1.5], seed=23)
        model = train_logistic(X, y, LogisticConfig(), ["f1", "f2"])
        text = model_to_text(model, "chars.txt", {"strategy": "full_window",
                                                  "features": "f1,f2"})
        back, chars_file, meta = model_from_text(text)
        assert chars_file == "chars.txt"
        assert meta["features"] == "f1,f2"
        assert back.intercept == model.intercept
        assert np.array_equal(back.weights, model.weights)
        assert back.feature_names == model.feature_names

    def test_adaboost_roundtrip_exact(self):
        X, y = stump_data(seed=29, n=800)
        model = train_adaboost(X, y, rounds=12, feature_names=["a", "b", "c", "d"])
        back, _, _ = model_from_text(model_to_text(model, "c.txt"))
        assert back.feature_names == model.feature_names
        assert len(back.rounds) == len(model.rounds)
        for (s1, a1, e1), (s2, a2, e2) in zip(back.rounds, model.rounds):
            assert (s1, a1, e1) == (s2, a2, e2)

    def test_monthly_roundtrip(self):
        rng = np.random.Generator(np.random.Philox(31))
        X = rng.normal(0, 1, (600, 1))
        y = (rng.random(600) < expit(X[:, 0])).astype(int)
        months = (np.arange(600) % 12) + 1
        bundle = monthly_ensemble(X, y, months, matrix_trainer)
        # serialize the wrapped matrix models
        text = model_to_text(bundle, "c.txt", {"strategy": "monthly_ensemble"})
        back, _, meta = model_from_text(text)
        assert isinstance(back, MonthlyEnsemble)
        assert meta["strategy"] == "monthly_ensemble"
        for m in range(1, 13):
            assert back.models[m].intercept == bundle.models[m].model.intercept
            assert np.array_equal(back.models[m].weights,
                                  bundle.models[m].model.weights)
