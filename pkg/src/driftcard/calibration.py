"""Stage 2: tie the scorecard to the expected central tendency of default.

A single exogenous quarterly series, chosen by correlation with the
internal default series, drives a one-variable linear regression. Three
forecast scenarios turn the regression into twelve monthly default
estimates; scores are then shifted along the log-odds axis until their
mean matches the forecast, which leaves the ranking (and therefore the
AUC) untouched. Forecast quality against realized default is scored with
a chi-square distance gated by the half/double average rule.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from ._io import float_repr, write_text_atomic
from .periods import (
    month_label,
    months_of_quarter,
    parse_period,
    quarter_label,
    quarter_of_month,
)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class MacroSeries:
    """Quarterly exogenous series; quarters strictly increasing, gap-free."""

    name: str
    quarters: tuple[int, ...]
    values: tuple[float, ...]
    abnormal: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if len(self.quarters) != len(self.values):
            raise CalibrationError(f"{self.name}: quarters/values length mismatch")
        diffs = np.diff(self.quarters)
        if (diffs < 1).any():
            raise CalibrationError(f"{self.name}: quarters must strictly increase")
        if (diffs > 1).any():
            raise CalibrationError(f"{self.name}: quarters must not have gaps")

    def value_at(self, quarter: int) -> float | None:
        try:
            return self.values[self.quarters.index(quarter)]
        except ValueError:
            return None


@dataclass(frozen=True)
class DefaultSeries:
    """Monthly internal default rates in [0, 1]."""

    months: tuple[int, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.months) != len(self.rates):
            raise CalibrationError("months/rates length mismatch")
        if (np.diff(self.months) < 1).any():
            raise CalibrationError("months must strictly increase")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise CalibrationError("rates must lie in [0, 1]")

    def quarterly(self) -> tuple[tuple[int, ...], tuple[float, ...]]:
        """Aggregate to quarters as the plain mean of the three months.

        Only quarters with all three months present are emitted.
        """
        by_month = dict(zip(self.months, self.rates))
        quarters = sorted({quarter_of_month(m) for m in self.months})
        out_q: list[int] = []
        out_v: list[float] = []
        for q in quarters:
            months = months_of_quarter(q)
            if all(m in by_month for m in months):
                out_q.append(q)
                out_v.append(float(np.mean([by_month[m] for m in months])))
        return tuple(out_q), tuple(out_v)

    def window(self, start: int, end: int) -> "DefaultSeries":
        pairs = [(m, r) for m, r in zip(self.months, self.rates) if start <= m <= end]
        return DefaultSeries(tuple(m for m, _ in pairs), tuple(r for _, r in pairs))


def monthly_default_series(months: Sequence[int], labels: Sequence[int]) -> DefaultSeries:
    """Realized default rate per month from labeled records."""
    months = np.asarray(months, dtype=int)
    y = np.asarray(labels, dtype=float)
    out_m = sorted(set(int(m) for m in months))
    rates = [float(y[months == m].mean()) for m in out_m]
    return DefaultSeries(tuple(out_m), tuple(rates))


# -- series text round-trip -------------------------------------------------

def series_to_text(periods: Iterable[str], values: Iterable[float]) -> str:
    lines = ["period,value"]
    lines += [f"{p},{float_repr(v)}" for p, v in zip(periods, values)]
    return "\n".join(lines) + "\n"


def _read_two_columns(text: str) -> list[tuple[str, float]]:
    rows: list[tuple[str, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or (lineno == 1 and line.lower().replace(" ", "") == "period,value"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise CalibrationError(f"line {lineno}: expected 'period,value'")
        rows.append((parts[0].strip(), float(parts[1])))
    return rows


def macro_series_from_text(text: str, name: str) -> MacroSeries:
    rows = _read_two_columns(text)
    quarters: list[int] = []
    values: list[float] = []
    for period, value in rows:
        kind, idx = parse_period(period)
        if kind != "quarter":
            raise CalibrationError(f"{name}: expected YYYY-Qn period, got {period!r}")
        quarters.append(idx)
        values.append(value)
    return MacroSeries(name=name, quarters=tuple(quarters), values=tuple(values))


def macro_series_to_text(series: MacroSeries) -> str:
    return series_to_text((quarter_label(q) for q in series.quarters), series.values)


def default_series_from_text(text: str) -> DefaultSeries:
    rows = _read_two_columns(text)
    months: list[int] = []
    rates: list[float] = []
    for period, value in rows:
        kind, idx = parse_period(period)
        if kind != "month":
            raise CalibrationError(f"expected YYYY-MM period, got {period!r}")
        months.append(idx)
        rates.append(value)
    return DefaultSeries(tuple(months), tuple(rates))


def default_series_to_text(series: DefaultSeries) -> str:
    return series_to_text((month_label(m) for m in series.months), series.rates)


def read_macro_series(path: str | Path) -> MacroSeries:
    path = Path(path)
    return macro_series_from_text(path.read_text(encoding="utf-8"), path.stem)


def read_default_series(path: str | Path) -> DefaultSeries:
    return default_series_from_text(Path(path).read_text(encoding="utf-8"))


# -- abnormal observations ----------------------------------------------------

def repair_abnormal(series: MacroSeries, flagged: Iterable[int]) -> MacroSeries:
    """Replace flagged quarters by the mean of their contiguous quarters.

    Only adjacent quarters that exist and are not themselves flagged count
    as neighbors; a flagged quarter with no usable neighbor is an error.
    """
    flagged = frozenset(flagged)
    unknown = flagged - set(series.quarters)
    if unknown:
        raise CalibrationError(
            f"{series.name}: flagged quarters not in series: "
            f"{sorted(quarter_label(q) for q in unknown)}"
        )
    by_quarter = dict(zip(series.quarters, series.values))
    repaired = dict(by_quarter)
    for q in sorted(flagged):
        neighbors = [
            by_quarter[n]
            for n in (q - 1, q + 1)
            if n in by_quarter and n not in flagged
        ]
        if not neighbors:
            raise CalibrationError(
                f"{series.name}: no usable neighbor for {quarter_label(q)}"
            )
        repaired[q] = float(np.mean(neighbors))
    return replace(
        series,
        values=tuple(repaired[q] for q in series.quarters),
        abnormal=series.abnormal | flagged,
    )


# -- predictor ranking --------------------------------------------------------

@dataclass(frozen=True)
class RegressionFit:
    predictor_name: str
    slope: float
    intercept: float
    correlation: float
    r_square: float
    n_points: int


def rank_predictors(
    default: DefaultSeries,
    candidates: Sequence[MacroSeries],
    fit_window: tuple[int, int] | None = None,
) -> tuple[list[RegressionFit], list[str]]:
    """Correlate candidates against the quarterly default and rank by |r|.

    Each candidate is fitted by single-variable OLS (default = intercept +
    slope * candidate) on the quarters where both series exist, optionally
    restricted to ``fit_window`` (inclusive quarter indices). Candidates
    with fewer than 3 overlapping points or no variance are excluded with
    a diagnostic. Ties in |r| break by name.
    """
    dq, dv = default.quarterly()
    d_by_q = dict(zip(dq, dv))
    fits: list[RegressionFit] = []
    diagnostics: list[str] = []
    for cand in candidates:
        pairs = [
            (d_by_q[q], v)
            for q, v in zip(cand.quarters, cand.values)
            if q in d_by_q and (
                fit_window is None or fit_window[0] <= q <= fit_window[1]
            )
        ]
        if len(pairs) < 3:
            diagnostics.append(f"{cand.name}: only {len(pairs)} overlapping quarters")
            continue
        y = np.array([p[0] for p in pairs])
        x = np.array([p[1] for p in pairs])
        xc = x - x.mean()
        yc = y - y.mean()
        sxx = float(xc @ xc)
        syy = float(yc @ yc)
        if sxx == 0.0:
            diagnostics.append(f"{cand.name}: constant series, correlation undefined")
            continue
        sxy = float(xc @ yc)
        slope = sxy / sxx
        intercept = float(y.mean() - slope * x.mean())
        r = sxy / math.sqrt(sxx * syy) if syy > 0.0 else 0.0
        fits.append(RegressionFit(
            predictor_name=cand.name,
            slope=slope,
            intercept=intercept,
            correlation=r,
            r_square=r * r,
            n_points=len(pairs),
        ))
    fits.sort(key=lambda f: (-abs(f.correlation), f.predictor_name))
    return fits, diagnostics


# -- forecast scenarios -------------------------------------------------------

@dataclass(frozen=True)
class ForecastResult:
    """Monthly default estimates from the regression scenarios.

    Raw linear-regression output: estimates may stray outside [0, 1]; the
    score-shifting stage validates its targets before use.
    """

    months: tuple[int, ...]
    estimates: tuple[float, ...]

    def mean(self) -> float:
        return float(np.mean(self.estimates))


@dataclass(frozen=True)
class Scenario:
    """Forecast scenario: 1 submits per-quarter estimates, 2 their average,
    3 the average with a late-year uplift."""

    variant: int
    uplift_factor: float = 1.01
    uplift_months: int = 2

    def __post_init__(self) -> None:
        if self.variant not in (1, 2, 3):
            raise CalibrationError("variant must be 1, 2 or 3")
        if self.uplift_factor <= 0.0:
            raise CalibrationError("uplift factor must be positive")
        if not 0 < self.uplift_months < 12:
            raise CalibrationError("uplift window must cover 1..11 months")


def forecast_default(
    scenario: Scenario,
    fit: RegressionFit,
    predictor: MacroSeries,
    history: DefaultSeries | None = None,
    start_month: int | None = None,
    n_months: int = 12,
    predictor_lag: int = 1,
) -> ForecastResult:
    """Monthly default estimates for a quarter-aligned horizon.

    Quarter q of the horizon is estimated adaptively as
    ``intercept + slope * predictor(q - predictor_lag)``. Variant 1 gives
    each month its quarter's estimate; variant 2 gives every month the
    mean of variant 1's months; variant 3 applies the uplift factor to the
    final ``uplift_months`` months of variant 2.
    """
    if start_month is None:
        if history is None or not history.months:
            raise CalibrationError("supply start_month or a non-empty history")
        start_month = history.months[-1] + 1
    if n_months % 3 != 0 or start_month % 3 != 0:
        raise CalibrationError("horizon must start and end on quarter boundaries")
    months = list(range(start_month, start_month + n_months))
    quarters = sorted({quarter_of_month(m) for m in months})
    estimates: list[float] = []
    for q in quarters:
        x = predictor.value_at(q - predictor_lag)
        if x is None:
            raise CalibrationError(
                f"predictor {predictor.name} lacks {quarter_label(q - predictor_lag)}"
            )
        estimates.append(fit.intercept + fit.slope * x)
    per_month = np.repeat(estimates, 3)
    if scenario.variant == 1:
        values = per_month
    else:
        average = float(np.mean(per_month))
        values = np.full(n_months, average)
        if scenario.variant == 3:
            values[-scenario.uplift_months:] = average * scenario.uplift_factor
    return ForecastResult(tuple(months), tuple(float(v) for v in values))


# -- score shifting -----------------------------------------------------------

@dataclass(frozen=True)
class CalibrationShift:
    """Fitted log-odds offsets; key "global" or the application month."""

    offsets: Mapping[str | int, float]
    targets: Mapping[str | int, float]
    achieved_error: float
    tolerance: float = 1e-9


def _solve_offset(scores: np.ndarray, target: float, tolerance: float) -> float:
    logits = logit(scores)

    def gap(delta: float) -> float:
        return float(np.mean(expit(logits + delta))) - target

    lo, hi = -1.0, 1.0
    for _ in range(80):
        if gap(lo) <= 0.0:
            break
        lo *= 2.0
    for _ in range(80):
        if gap(hi) >= 0.0:
            break
        hi *= 2.0
    if gap(lo) > 0.0 or gap(hi) < 0.0:
        raise CalibrationError(
            f"offset search failed to bracket the target (lo={lo}, hi={hi})"
        )
    delta = float(brentq(gap, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200))
    if abs(gap(delta)) > tolerance:
        raise CalibrationError(
            f"offset solve missed tolerance: residual {gap(delta):.3e} "
            f"(bracket [{lo}, {hi}])"
        )
    return delta


def shift_scores(
    scores: Sequence[float],
    target_mean: float,
    tolerance: float = 1e-9,
) -> tuple[CalibrationShift, np.ndarray]:
    """Shift scores along the log-odds axis to a target mean default.

    adjusted = sigmoid(logit(score) + delta) with the unique delta making
    mean(adjusted) equal the target within ``tolerance``. The transform is
    strictly increasing, so the ranking and AUC are unchanged.
    """
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise CalibrationError("no scores to shift")
    if not 0.0 < target_mean < 1.0:
        raise CalibrationError("target mean must lie in (0, 1)")
    if (s <= 0.0).any() or (s >= 1.0).any():
        raise CalibrationError("scores must lie strictly in (0, 1)")
    delta = _solve_offset(s, target_mean, tolerance)
    adjusted = expit(logit(s) + delta) if delta != 0.0 else s.copy()
    shift = CalibrationShift(
        offsets={"global": delta},
        targets={"global": target_mean},
        achieved_error=abs(float(adjusted.mean()) - target_mean),
        tolerance=tolerance,
    )
    return shift, adjusted


def shift_scores_by_month(
    scores: Sequence[float],
    months: Sequence[int],
    targets: Mapping[int, float],
    tolerance: float = 1e-9,
) -> tuple[CalibrationShift, np.ndarray]:
    """Per-month variant of :func:`shift_scores` for monthly targets.

    ``months`` are calendar months (1..12) or any keys matching ``targets``.
    Every month present in ``scores`` must have a target.
    """
    s = np.asarray(scores, dtype=float)
    m = np.asarray(months, dtype=int)
    if s.size != m.size:
        raise CalibrationError("scores and months differ in length")
    missing = sorted(set(m.tolist()) - set(targets))
    if missing:
        raise CalibrationError(f"no target for month(s): {missing}")
    adjusted = np.empty_like(s)
    offsets: dict[int, float] = {}
    used: dict[int, float] = {}
    worst = 0.0
    for month in sorted(set(m.tolist())):
        sel = m == month
        shift, adj = shift_scores(s[sel], targets[month], tolerance)
        adjusted[sel] = adj
        offsets[month] = shift.offsets["global"]
        used[month] = targets[month]
        worst = max(worst, shift.achieved_error)
    return CalibrationShift(offsets, used, worst, tolerance), adjusted


# -- forecast quality ---------------------------------------------------------

class DistanceResult(NamedTuple):
    d: float
    valid: bool
    mean_estimate: float
    mean_observed: float


def distance_d(estimates: Sequence[float], observed: Sequence[float]) -> DistanceResult:
    """Chi-square distance over 12 monthly estimates with the half/double gate.

    D = sum (est - obs)^2 / obs. The validity flag requires the average
    estimated delinquency to stay within half and double of the observed
    average, boundaries included.
    """
    e = np.asarray(estimates, dtype=float)
    o = np.asarray(observed, dtype=float)
    if e.shape != (12,) or o.shape != (12,):
        raise CalibrationError("estimates and observed must both have 12 months")
    if (o <= 0.0).any():
        raise CalibrationError("observed rates must be positive")
    d = float(np.sum((e - o) ** 2 / o))
    mean_e = float(e.mean())
    mean_o = float(o.mean())
    valid = 0.5 * mean_o <= mean_e <= 2.0 * mean_o
    return DistanceResult(d=d, valid=valid, mean_estimate=mean_e, mean_observed=mean_o)


def apply_cutoff(scores: Sequence[float], cutoff: float) -> tuple[np.ndarray, float]:
    """Approve scores below the cutoff; expected rate is their mean score."""
    s = np.asarray(scores, dtype=float)
    if not 0.0 < cutoff < 1.0:
        raise CalibrationError("cutoff must lie in (0, 1)")
    approved = s < cutoff
    if not approved.any():
        raise CalibrationError("cutoff approves no applications")
    return approved, float(s[approved].mean())
