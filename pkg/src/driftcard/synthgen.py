"""Deterministic synthetic credit data for desk-scale experiments.

Labels are drawn from a known logistic model over generated covariates,
plus additive seasonal log-odds offsets; the latent intercept is solved so
the expected portfolio default rate hits the configured base rate. Drift
knobs cover wage inflation on recorded income, unfamiliar-code injection
in the final months, invalid recorded values (impossible ages, due days
past month end) and informative missingness, so every cleansing and
mitigation path has something real to chew on.

All randomness comes from Philox (a 64-bit counter-based generator with a
stable stream across platforms and releases). Records are generated in
fixed blocks of 8192 with per-block streams derived from the master seed,
so generation can be sharded without changing the output.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .calibration import DefaultSeries, MacroSeries, monthly_default_series
from .dataset import Application
from .periods import month_of_year, parse_month, year_of_month

BLOCK = 8192
_TABLE_STREAM = 0x7A817E5  # sub-stream for effect tables, distinct from blocks


class GenerationError(ValueError):
    pass


DEFAULT_COEFFICIENTS: dict[str, float] = {
    "age": -0.45,
    "income": -0.55,
    "time_at_address": -0.18,
    "time_at_employer": -0.22,
    "occupation": 1.0,
    "marital_status": 1.0,
    "state": 1.0,
    "income_proof": 1.0,
    "previous_credit": -0.35,
    "works_in_same_state": -0.10,
    "missing_income": 0.30,
    "missing_occupation": 1.0,
}

#: gentle second-semester rise, matching the flavour of the internal series
DEFAULT_SEASONALITY = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                       0.03, 0.04, 0.05, 0.06, 0.08, 0.10)

_PROOF_EFFECTS = {"none": 0.18, "payslip": -0.20, "tax": -0.35}
_MARITAL = ("single", "married", "divorced", "widowed", "partner")
_MARITAL_P = (0.38, 0.40, 0.10, 0.05, 0.07)
_HOME = ("owned", "rented", "family", "company")
_HOME_P = (0.42, 0.35, 0.18, 0.05)
_PROOF = ("none", "payslip", "tax")
_PROOF_P = (0.85, 0.10, 0.05)


def _zipf_probs(k: int, exponent: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** exponent
    return w / w.sum()


@dataclass(frozen=True)
class PopulationSpec:
    n_records: int = 20000
    start_month: str = "2009-01"
    n_months: int = 36
    base_default_rate: float = 0.273
    coefficients: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_COEFFICIENTS)
    )
    seasonal_offsets: tuple[float, ...] = DEFAULT_SEASONALITY
    income_inflation: float = 0.06
    new_code_rate: float = 0.0
    new_code_months: int = 12
    age_shift_per_year: float = 0.0
    invalid_age_rate: float = 0.0005
    invalid_due_day_rate: float = 0.0002
    missing_income_rate: float = 0.03
    missing_occupation_rate: float = 0.04
    #: sd of the true log-odds effect carried by injected codes; 0 means new
    #: codes mirror average risk, which the average-WoE fallback matches
    new_code_effect_sd: float = 0.0
    n_occupation_codes: int = 40
    n_states: int = 8
    n_cities: int = 50
    n_neighborhoods: int = 300
    n_dialing_codes: int = 30
    n_new_codes: int = 20

    def __post_init__(self) -> None:
        if self.n_records < 1:
            raise GenerationError("n_records must be positive")
        if not 0.0 < self.base_default_rate < 1.0:
            raise GenerationError("base default rate must lie in (0, 1)")
        if not 0.0 <= self.new_code_rate < 1.0:
            raise GenerationError("new-code injection rate must lie in [0, 1)")
        if len(self.seasonal_offsets) != 12:
            raise GenerationError("seasonal_offsets needs 12 entries")
        if self.n_months < 1:
            raise GenerationError("n_months must be positive")


@dataclass
class PopulationTruth:
    """Ground truth behind a generated population (the oracle side)."""

    records: list[Application]
    log_odds: np.ndarray          # z without the solved intercept
    intercept: float
    probabilities: np.ndarray
    labels: np.ndarray
    months: np.ndarray


def _tables_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _TABLE_STREAM])))


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


@dataclass
class _EffectTables:
    occupation: np.ndarray
    new_codes: np.ndarray
    marital: np.ndarray
    state: np.ndarray


def _draw_tables(spec: PopulationSpec, seed: int) -> _EffectTables:
    rng = _tables_rng(seed)
    return _EffectTables(
        occupation=rng.normal(0.0, 0.6, spec.n_occupation_codes),
        new_codes=spec.new_code_effect_sd * rng.normal(0.0, 1.0, spec.n_new_codes),
        marital=rng.normal(0.0, 0.25, len(_MARITAL)),
        state=rng.normal(0.0, 0.15, spec.n_states),
    )


def _solve_intercept(z: np.ndarray, base_rate: float) -> float:
    def gap(c: float) -> float:
        return float(np.mean(expit(z + c))) - base_rate

    lo, hi = -2.0, 2.0
    for _ in range(60):
        if gap(lo) <= 0.0:
            break
        lo *= 2.0
    for _ in range(60):
        if gap(hi) >= 0.0:
            break
        hi *= 2.0
    return float(brentq(gap, lo, hi, xtol=1e-13, maxiter=200))


def generate_population_truth(spec: PopulationSpec, seed: int) -> PopulationTruth:
    """Generate labeled applications together with their generating truth."""
    coef = dict(DEFAULT_COEFFICIENTS)
    coef.update(spec.coefficients)
    tables = _draw_tables(spec, seed)
    start = parse_month(spec.start_month)
    start_year = year_of_month(start)
    months_range = np.arange(start, start + spec.n_months)
    injection_start = start + spec.n_months - spec.new_code_months

    occ_p = _zipf_probs(spec.n_occupation_codes)
    state_p = _zipf_probs(spec.n_states, 0.9)
    city_p = _zipf_probs(spec.n_cities)
    neigh_p = _zipf_probs(spec.n_neighborhoods, 1.2)
    dial_p = _zipf_probs(spec.n_dialing_codes)

    blocks: list[dict[str, np.ndarray]] = []
    n_left = spec.n_records
    for b in range(math.ceil(spec.n_records / BLOCK)):
        m = min(BLOCK, n_left)
        n_left -= m
        rng = _block_rng(seed, b)
        d: dict[str, np.ndarray] = {}
        d["month"] = months_range[rng.integers(0, spec.n_months, m)]
        d["day"] = rng.integers(1, 29, m)
        year_off = np.array([year_of_month(mi) - start_year for mi in d["month"]])

        age_latent = rng.normal(38.0, 12.0, m) + spec.age_shift_per_year * year_off
        age_latent = np.clip(np.round(age_latent), 18, 90)
        d["age_latent"] = age_latent
        d["age_invalid"] = rng.random(m) < spec.invalid_age_rate
        d["age_junk"] = rng.integers(100, 989, m).astype(float)

        wage_level = (1.0 + spec.income_inflation) ** year_off
        log_income_real = rng.normal(math.log(1500.0), 0.7, m)
        d["income_real"] = np.exp(log_income_real)
        d["income"] = np.round(d["income_real"] * wage_level, 2)
        d["income_missing"] = rng.random(m) < spec.missing_income_rate

        d["taa"] = np.clip(np.round(rng.exponential(60.0, m)), 0, 480)
        d["tae"] = np.clip(np.round(rng.exponential(48.0, m)), 0, 480)
        d["ndep"] = rng.poisson(0.25, m).astype(float)
        d["nacc"] = rng.poisson(0.03, m).astype(float)

        d["due"] = rng.integers(1, 29, m)
        d["due_invalid"] = rng.random(m) < spec.invalid_due_day_rate
        d["due_junk"] = rng.integers(32, 46, m)

        d["state"] = rng.choice(spec.n_states, m, p=state_p)
        d["city"] = rng.choice(spec.n_cities, m, p=city_p)
        d["neigh"] = rng.choice(spec.n_neighborhoods, m, p=neigh_p)
        d["marital"] = rng.choice(len(_MARITAL), m, p=np.array(_MARITAL_P))
        d["occ"] = rng.choice(spec.n_occupation_codes, m, p=occ_p)
        d["occ_missing"] = rng.random(m) < spec.missing_occupation_rate
        d["proof"] = rng.choice(len(_PROOF), m, p=np.array(_PROOF_P))
        d["home"] = rng.choice(len(_HOME), m, p=np.array(_HOME_P))
        d["dialing"] = rng.choice(spec.n_dialing_codes, m, p=dial_p)

        d["has_phone"] = (rng.random(m) < 0.97).astype(int)
        d["previous_credit"] = (rng.random(m) < 0.35).astype(int)
        d["same_state"] = (rng.random(m) < 0.70).astype(int)

        inject = (rng.random(m) < spec.new_code_rate) & (d["month"] >= injection_start)
        d["occ_new"] = inject
        d["occ_new_pick"] = rng.integers(0, spec.n_new_codes, m)
        d["neigh_new"] = (rng.random(m) < spec.new_code_rate) & (
            d["month"] >= injection_start
        )
        d["neigh_new_pick"] = rng.integers(0, spec.n_new_codes, m)
        d["label_u"] = rng.random(m)
        blocks.append(d)

    cat = {k: np.concatenate([blk[k] for blk in blocks]) for k in blocks[0]}
    n = spec.n_records

    season = np.array(spec.seasonal_offsets)
    z = np.zeros(n)
    z += coef["age"] * (cat["age_latent"] - 38.0) / 12.0
    z += coef["income"] * (np.log(cat["income_real"]) - math.log(1500.0)) / 0.7
    z += coef["time_at_address"] * (np.log1p(cat["taa"]) - math.log1p(60.0)) / 0.9
    z += coef["time_at_employer"] * (np.log1p(cat["tae"]) - math.log1p(48.0)) / 0.9
    occ_effect = np.where(
        cat["occ_new"],
        tables.new_codes[cat["occ_new_pick"]],
        tables.occupation[cat["occ"]],
    )
    z += coef["occupation"] * np.where(cat["occ_missing"], 0.0, occ_effect)
    z += np.where(cat["occ_missing"], coef["missing_occupation"], 0.0)
    z += coef["marital_status"] * tables.marital[cat["marital"]]
    z += coef["state"] * tables.state[cat["state"]]
    z += coef["income_proof"] * np.array(
        [_PROOF_EFFECTS[_PROOF[i]] for i in cat["proof"]]
    )
    z += np.where(cat["income_missing"], coef["missing_income"], 0.0)
    z += coef["previous_credit"] * (cat["previous_credit"] - 0.35)
    z += coef["works_in_same_state"] * (cat["same_state"] - 0.70)
    z += season[np.array([month_of_year(m) - 1 for m in cat["month"]])]

    intercept = _solve_intercept(z, spec.base_default_rate)
    probabilities = expit(z + intercept)
    labels = (cat["label_u"] < probabilities).astype(int)

    records: list[Application] = []
    for i in range(n):
        month = int(cat["month"][i])
        date = dt.date(year_of_month(month), month_of_year(month), int(cat["day"][i]))
        age = cat["age_junk"][i] if cat["age_invalid"][i] else cat["age_latent"][i]
        income = None if cat["income_missing"][i] else float(cat["income"][i])
        if cat["occ_missing"][i]:
            occ_token = None
        elif cat["occ_new"][i]:
            occ_token = f"new{int(cat['occ_new_pick'][i]):02d}"
        else:
            occ_token = f"c{int(cat['occ'][i]):02d}"
        neigh_token = (
            f"nn{int(cat['neigh_new_pick'][i]):02d}" if cat["neigh_new"][i]
            else f"n{int(cat['neigh'][i]):04d}"
        )
        due_token = (
            str(int(cat["due_junk"][i])) if cat["due_invalid"][i]
            else str(int(cat["due"][i]))
        )
        records.append(Application(
            id=f"a{i:08d}",
            application_date=date,
            numeric_attrs={
                "age": float(age),
                "monthly_income": income,
                "time_at_address": float(cat["taa"][i]),
                "time_at_employer": float(cat["tae"][i]),
                "n_dependents": float(cat["ndep"][i]),
                "n_accounts": float(cat["nacc"][i]),
            },
            nominal_attrs={
                "due_day": due_token,
                "state": f"st{int(cat['state'][i]):02d}",
                "city": f"c{int(cat['city'][i]):03d}",
                "neighborhood": neigh_token,
                "marital_status": _MARITAL[int(cat["marital"][i])],
                "occupation_code": occ_token,
                "income_proof_type": _PROOF[int(cat["proof"][i])],
                "home_type": _HOME[int(cat["home"][i])],
                "dialing_code": f"d{int(cat['dialing'][i]):02d}",
            },
            binary_attrs={
                "has_phone": int(cat["has_phone"][i]),
                "previous_credit": int(cat["previous_credit"][i]),
                "works_in_same_state": int(cat["same_state"][i]),
            },
            label=int(labels[i]),
        ))
    return PopulationTruth(
        records=records,
        log_odds=z,
        intercept=intercept,
        probabilities=probabilities,
        labels=labels,
        months=cat["month"].astype(int),
    )


def generate_population(spec: PopulationSpec, seed: int) -> list[Application]:
    """Labeled applications drawn from the spec's true logistic model."""
    return generate_population_truth(spec, seed).records


def realized_default_series(records: Sequence[Application]) -> DefaultSeries:
    labeled = [r for r in records if r.label is not None]
    return monthly_default_series(
        [r.month for r in labeled], [r.label for r in labeled]
    )


def inflation_factors(spec: PopulationSpec) -> dict[int, float]:
    """Deflators mapping each covered year's income to the base-year level."""
    start_year = year_of_month(parse_month(spec.start_month))
    end_year = year_of_month(parse_month(spec.start_month) + spec.n_months - 1)
    return {
        year: (1.0 + spec.income_inflation) ** (start_year - year)
        for year in range(start_year, end_year + 1)
    }


# -- macro series -----------------------------------------------------------

@dataclass(frozen=True)
class MacroSpec:
    name: str = "macro"
    quarters: tuple[int, ...] = ()        # default: all quarters of the default series
    loading: float = 1.0
    noise_scale: float = 1.0
    target_correlation: float | None = 0.8
    level: float = 0.0
    fit_quarters: tuple[int, ...] = ()    # default: quarters of the default series

    def __post_init__(self) -> None:
        if self.target_correlation is not None and not -1.0 <= self.target_correlation <= 1.0:
            raise GenerationError("target correlation must lie in [-1, 1]")


def generate_macro(
    spec: MacroSpec, default_series: DefaultSeries, seed: int
) -> MacroSeries:
    """Exogenous quarterly series tied to the realized default series.

    The series is an affine function of the quarterly default plus seeded
    noise. When a target correlation is set, the noise is orthogonalized
    and scaled so the sample correlation over the fit quarters hits the
    target essentially exactly; the loading's sign must agree with the
    target and the magnitude must be in (0, 1].
    """
    dq, dv = default_series.quarterly()
    if len(dq) < 3:
        raise GenerationError("default series covers fewer than 3 full quarters")
    quarters = spec.quarters or dq
    missing = [q for q in quarters if q not in dq]
    if missing:
        raise GenerationError(f"default series lacks quarters {missing}")
    d_by_q = dict(zip(dq, dv))
    d = np.array([d_by_q[q] for q in quarters])
    fit_quarters = spec.fit_quarters or dq
    fit_sel = np.array([q in set(fit_quarters) for q in quarters])
    if fit_sel.sum() < 3:
        raise GenerationError("fit window covers fewer than 3 quarters")

    d_fit = d[fit_sel]
    sd_d = float(d_fit.std())
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1])))
    noise = rng.normal(0.0, 1.0, len(quarters))
    base = spec.loading * (d - d_fit.mean())

    if spec.target_correlation is None:
        values = spec.level + base + spec.noise_scale * noise
        return MacroSeries(spec.name, tuple(quarters), tuple(map(float, values)))

    rho = spec.target_correlation
    if rho == 0.0 or spec.loading == 0.0:
        raise GenerationError("zero target correlation or loading is infeasible")
    if (rho > 0) != (spec.loading > 0):
        raise GenerationError("target correlation sign must match the loading sign")
    if sd_d == 0.0:
        raise GenerationError("constant default series cannot hit a correlation")
    dc_fit = d_fit - d_fit.mean()
    proj = float(noise[fit_sel] @ dc_fit) / float(dc_fit @ dc_fit)
    noise = noise - proj * (d - d_fit.mean())
    noise = noise - noise[fit_sel].mean()
    sd_e = float(noise[fit_sel].std())
    if sd_e < 1e-12:
        raise GenerationError("degenerate noise; cannot scale to the target")
    noise = noise / sd_e
    scale = abs(spec.loading) * sd_d * math.sqrt(1.0 / rho**2 - 1.0)
    values = spec.level + base + scale * noise
    return MacroSeries(spec.name, tuple(quarters), tuple(map(float, values)))


def inject_abnormal(series: MacroSeries, quarter: int, factor: float = 3.0) -> MacroSeries:
    """Spike one quarter of a series, marking it abnormal."""
    if quarter not in series.quarters:
        raise GenerationError(f"quarter {quarter} not in series {series.name}")
    values = tuple(
        v * factor if q == quarter else v
        for q, v in zip(series.quarters, series.values)
    )
    return replace(series, values=values, abnormal=series.abnormal | {quarter})


# -- plain design for trainer-recovery oracles --------------------------------

def generate_logistic_design(
    n: int, intercept: float, coefficients: Sequence[float], seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal design with Bernoulli labels from a known model."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
    beta = np.asarray(coefficients, dtype=float)
    X = rng.normal(0.0, 1.0, (n, beta.size))
    p = expit(intercept + X @ beta)
    y = (rng.random(n) < p).astype(int)
    return X, y
