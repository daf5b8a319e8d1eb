import numpy as np
import pytest
from scipy.special import expit

from driftcard import dataset, evaluation, models, scorecard, synthgen
from driftcard.periods import parse_month, year_of_month
from driftcard.synthgen import (
    GenerationError,
    MacroSpec,
    PopulationSpec,
    generate_logistic_design,
    generate_macro,
    generate_population,
    generate_population_truth,
    inject_abnormal,
    realized_default_series,
)


def records_fingerprint(records):
    return dataset.write_dataset(records)


class TestPopulation:
    def test_same_seed_bit_identical(self):
        spec = PopulationSpec(n_records=9000)  # crosses a block boundary
        a = generate_population(spec, 42)
        b = generate_population(spec, 42)
        assert records_fingerprint(a) == records_fingerprint(b)

    def test_different_seed_differs(self):
        spec = PopulationSpec(n_records=2000)
        a = generate_population(spec, 1)
        b = generate_population(spec, 2)
        assert records_fingerprint(a) != records_fingerprint(b)

    def test_base_rate_without_covariate_effects(self):
        zeroed = {k: 0.0 for k in synthgen.DEFAULT_COEFFICIENTS}
        spec = PopulationSpec(
            n_records=100_000, base_default_rate=0.273, coefficients=zeroed,
            seasonal_offsets=(0.0,) * 12,
        )
        records = generate_population(spec, 3)
        rate = np.mean([r.label for r in records])
        assert abs(rate - 0.273) < 0.01

    def test_realized_rate_within_three_binomial_sd(self):
        spec = PopulationSpec(n_records=20_000)
        truth = generate_population_truth(spec, 5)
        rate = truth.labels.mean()
        sd = np.sqrt(0.273 * (1 - 0.273) / 20_000)
        assert abs(rate - 0.273) <= 3 * sd

    def test_new_code_injection_share(self):
        spec = PopulationSpec(n_records=40_000, new_code_rate=0.05,
                              new_code_months=12, n_months=36)
        records = generate_population(spec, 7)
        start = parse_month(spec.start_month)
        final_year = [r for r in records if r.month >= start + 24]
        injected = [
            r for r in final_year
            if (r.nominal_attrs["occupation_code"] or "").startswith("new")
        ]
        share = len(injected) / len(final_year)
        assert abs(share - 0.05 * (1 - spec.missing_occupation_rate)) < 0.01
        earlier = [
            r for r in records if r.month < start + 24
            and (r.nominal_attrs["occupation_code"] or "").startswith("new")
        ]
        assert earlier == []

    def test_invalid_values_injected(self):
        spec = PopulationSpec(n_records=30_000, invalid_age_rate=0.01,
                              invalid_due_day_rate=0.01)
        records = generate_population(spec, 9)
        bad_ages = [r for r in records if r.numeric_attrs["age"] >= 100]
        assert 150 <= len(bad_ages) <= 450
        assert all(100 <= r.numeric_attrs["age"] <= 988 for r in bad_ages)
        bad_due = [r for r in records
                   if int(r.nominal_attrs["due_day"]) > 31]
        assert bad_due

    def test_missingness(self):
        spec = PopulationSpec(n_records=20_000)
        records = generate_population(spec, 11)
        missing_income = sum(
            1 for r in records if r.numeric_attrs["monthly_income"] is None
        )
        missing_occ = sum(
            1 for r in records if r.nominal_attrs["occupation_code"] is None
        )
        assert abs(missing_income / 20_000 - 0.03) < 0.01
        assert abs(missing_occ / 20_000 - 0.04) < 0.01

    def test_income_drift_across_years(self):
        spec = PopulationSpec(n_records=30_000, income_inflation=0.2)
        records = generate_population(spec, 13)
        start_year = year_of_month(parse_month(spec.start_month))
        by_year = {}
        for r in records:
            income = r.numeric_attrs["monthly_income"]
            if income is not None:
                by_year.setdefault(r.application_date.year, []).append(income)
        medians = [np.median(by_year[y]) for y in sorted(by_year)]
        assert medians[1] / medians[0] == pytest.approx(1.2, rel=0.1)
        assert medians[2] / medians[0] == pytest.approx(1.44, rel=0.1)

    def test_inflation_factors_deflate_to_base_year(self):
        spec = PopulationSpec(n_records=10, income_inflation=0.1)
        factors = synthgen.inflation_factors(spec)
        assert factors[2009] == 1.0
        assert factors[2010] == pytest.approx(1 / 1.1)
        assert factors[2011] == pytest.approx(1 / 1.21)

    def test_true_probabilities_match_labels(self):
        spec = PopulationSpec(n_records=50_000)
        truth = generate_population_truth(spec, 15)
        # oracle check: realized rate among high-p records is high
        high = truth.probabilities > 0.5
        assert truth.labels[high].mean() > truth.labels[~high].mean() + 0.2

    def test_spec_validation(self):
        with pytest.raises(GenerationError):
            PopulationSpec(n_records=0)
        with pytest.raises(GenerationError):
            PopulationSpec(base_default_rate=1.5)
        with pytest.raises(GenerationError):
            PopulationSpec(new_code_rate=1.0)
        with pytest.raises(GenerationError):
            PopulationSpec(seasonal_offsets=(0.0,) * 11)


class TestDefaultSeries:
    def test_series_covers_period(self):
        spec = PopulationSpec(n_records=12_000, n_months=24)
        records = generate_population(spec, 17)
        series = realized_default_series(records)
        assert len(series.months) == 24
        assert all(0 < r < 1 for r in series.rates)


class TestMacro:
    def series(self, seed=19, n=16_000, months=36):
        spec = PopulationSpec(n_records=n, n_months=months)
        return realized_default_series(generate_population(spec, seed))

    def test_exact_target_correlation(self):
        ds = self.series()
        m = generate_macro(MacroSpec(name="m", target_correlation=0.8), ds, 1)
        dq, dv = ds.quarterly()
        r = np.corrcoef(dv, m.values)[0, 1]
        assert abs(r - 0.8) < 1e-9

    def test_negative_target(self):
        ds = self.series()
        m = generate_macro(
            MacroSpec(name="m", loading=-1.0, target_correlation=-0.7), ds, 2
        )
        _, dv = ds.quarterly()
        assert abs(np.corrcoef(dv, m.values)[0, 1] + 0.7) < 1e-9

    def test_unit_correlation_pure_affine(self):
        ds = self.series(seed=21)
        m = generate_macro(MacroSpec(name="m", target_correlation=1.0), ds, 3)
        _, dv = ds.quarterly()
        assert abs(np.corrcoef(dv, m.values)[0, 1] - 1.0) < 1e-12

    def test_correlation_band_across_seeds(self):
        ds = self.series(seed=23)
        rs = []
        for seed in range(30):
            m = generate_macro(MacroSpec(name="m", target_correlation=0.8), ds, seed)
            _, dv = ds.quarterly()
            rs.append(np.corrcoef(dv, m.values)[0, 1])
        assert all(0.6 <= r <= 0.95 for r in rs)

    def test_same_seed_identical(self):
        ds = self.series(seed=25)
        a = generate_macro(MacroSpec(name="m"), ds, 7)
        b = generate_macro(MacroSpec(name="m"), ds, 7)
        assert a == b

    def test_uncontrolled_mode(self):
        ds = self.series(seed=27)
        m = generate_macro(
            MacroSpec(name="m", target_correlation=None, noise_scale=0.5), ds, 8
        )
        assert len(m.quarters) == len(ds.quarterly()[0])

    def test_infeasible_combinations(self):
        ds = self.series(seed=29)
        with pytest.raises(GenerationError):
            generate_macro(MacroSpec(name="m", target_correlation=0.0), ds, 1)
        with pytest.raises(GenerationError):
            generate_macro(
                MacroSpec(name="m", loading=-1.0, target_correlation=0.5), ds, 1
            )
        flat = realized_default_series(
            generate_population(PopulationSpec(n_records=400, n_months=3), 1)
        )
        with pytest.raises(GenerationError):
            generate_macro(MacroSpec(name="m"), flat, 1)

    def test_inject_abnormal(self):
        ds = self.series(seed=31)
        m = generate_macro(MacroSpec(name="m"), ds, 9)
        spiked = inject_abnormal(m, m.quarters[2], factor=3.0)
        assert spiked.values[2] == pytest.approx(3 * m.values[2])
        assert spiked.abnormal == {m.quarters[2]}
        assert spiked.values[:2] == m.values[:2]


class TestLogisticDesign:
    def test_shapes_and_determinism(self):
        X, y = generate_logistic_design(1000, -1.0, [0.5, -0.5], 3)
        X2, y2 = generate_logistic_design(1000, -1.0, [0.5, -0.5], 3)
        assert X.shape == (1000, 2)
        assert np.array_equal(X, X2) and np.array_equal(y, y2)

    def test_rate_responds_to_intercept(self):
        _, y_low = generate_logistic_design(20_000, -2.0, [0.3], 5)
        _, y_high = generate_logistic_design(20_000, 0.0, [0.3], 5)
        assert y_low.mean() < 0.2 < 0.4 < y_high.mean()


class TestOracleBound:
    def test_true_model_beats_trained_model_on_holdout(self):
        spec = PopulationSpec(n_records=14_000, n_months=36)
        truth = generate_population_truth(spec, 33)
        start = parse_month(spec.start_month)
        holdout_sel = truth.months >= start + 24
        records = truth.records
        modeling = [r for i, r in enumerate(records) if not holdout_sel[i]]
        holdout = [r for i, r in enumerate(records) if holdout_sel[i]]
        y_model = [r.label for r in modeling]
        specs = [
            scorecard.CharacteristicSpec("age", "numeric", ("age",)),
            scorecard.CharacteristicSpec("income", "numeric", ("monthly_income",)),
            scorecard.CharacteristicSpec("occ", "nominal", ("occupation_code",)),
            scorecard.CharacteristicSpec("marital", "nominal", ("marital_status",)),
        ]
        chars = scorecard.fit_characteristics(modeling, y_model, specs)
        X = scorecard.encode_records(modeling, chars)
        model = models.train_logistic(X, np.array(y_model), models.LogisticConfig())
        card = scorecard.Scorecard(chars, model)
        trained_auc = evaluation.auc(
            card.score(holdout), [r.label for r in holdout]
        ).auc
        oracle_auc = evaluation.auc(
            truth.probabilities[holdout_sel], truth.labels[holdout_sel]
        ).auc
        assert oracle_auc > trained_auc
