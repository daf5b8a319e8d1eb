"""Glue between applications, characteristics and classifiers.

A :class:`Scorecard` owns a fitted characteristic list and a trained model
and scores raw applications end to end (encode, then predict; monthly
bundles route each record to its application month's member). Fitting
helpers extract raw values from applications, so the binning module stays
ignorant of record layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import binning, models
from .binning import BinningConfig, Characteristic
from .dataset import Application, DatasetSchema
from .evaluation import PsiReport, kfold_cv, psi
from .models import LogisticConfig, LogisticModel, MonthlyEnsemble, StumpEnsemble
from .periods import month_of_year


class ScorecardError(ValueError):
    pass


@dataclass(frozen=True)
class CharacteristicSpec:
    """What to fit: a plain variable or an interaction of fitted parents."""

    name: str
    kind: str  # "numeric" | "nominal" | "interaction"
    sources: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind not in ("numeric", "nominal", "interaction"):
            raise ScorecardError(f"unknown spec kind {self.kind!r}")
        want = (2, 3) if self.kind == "interaction" else (1,)
        if len(self.sources) not in want:
            raise ScorecardError(f"{self.name}: wrong source count for {self.kind}")


def spec_from_expression(expression: str, schema: DatasetSchema,
                         extra_numeric: tuple[str, ...] = ()) -> CharacteristicSpec:
    """Build a spec from "variable" or "a*b" / "a*b*c" expressions."""
    parts = tuple(p.strip() for p in expression.split("*"))
    numeric = set(schema.numeric) | set(extra_numeric)
    nominal = set(schema.nominal) | set(schema.binary) | {"geography"}
    for p in parts:
        if p not in numeric and p not in nominal:
            raise ScorecardError(f"unknown variable {p!r} in {expression!r}")
    if len(parts) == 1:
        kind = "numeric" if parts[0] in numeric else "nominal"
        return CharacteristicSpec(parts[0], kind, parts)
    return CharacteristicSpec("*".join(parts), "interaction", parts)


def raw_value(record: Application, variable: str):
    """Raw value of a variable on a record; binaries become tokens."""
    if variable in record.numeric_attrs:
        return record.numeric_attrs[variable]
    if variable in record.nominal_attrs:
        return record.nominal_attrs[variable]
    if variable in record.binary_attrs:
        v = record.binary_attrs[variable]
        return None if v is None else str(v)
    raise ScorecardError(f"record {record.id} has no variable {variable!r}")


def characteristic_input(record: Application, char: Characteristic):
    """Raw value (or tuple of parent raw values) feeding a characteristic."""
    if char.kind == "interaction":
        return tuple(raw_value(record, p.sources[0]) for p in char.parents)
    return raw_value(record, char.sources[0])


def fit_characteristics(
    records: Sequence[Application],
    labels: Sequence[int],
    specs: Sequence[CharacteristicSpec],
    config: BinningConfig = BinningConfig(),
) -> list[Characteristic]:
    """Fit specs in order; interaction parents must appear first.

    Parents of an interaction are located among the already-fitted plain
    characteristics by source name.
    """
    fitted: dict[str, Characteristic] = {}
    out: list[Characteristic] = []
    for spec in specs:
        if spec.kind == "numeric":
            values = [r.numeric_attrs.get(spec.sources[0]) for r in records]
            ch = binning.supervised_bin(values, labels, config, name=spec.name,
                                        source=spec.sources[0])
        elif spec.kind == "nominal":
            tokens = [raw_value(r, spec.sources[0]) for r in records]
            ch = binning.bin_nominal(tokens, labels, name=spec.name,
                                     source=spec.sources[0])
        else:
            parents = []
            for src in spec.sources:
                parent = fitted.get(src)
                if parent is None or parent.kind == "interaction":
                    raise ScorecardError(
                        f"{spec.name}: parent {src!r} must be a fitted plain "
                        f"characteristic earlier in the spec list"
                    )
                parents.append(parent)
            parent_values = [
                [raw_value(r, p.sources[0]) for r in records] for p in parents
            ]
            ch = binning.build_interaction(
                spec.name, parents, parent_values, labels,
                min_bin_fraction=config.min_bin_fraction,
            )
        fitted[spec.name] = ch
        out.append(ch)
    return out


def encode_records(
    records: Sequence[Application],
    characteristics: Sequence[Characteristic],
    unfamiliar: str = "average",
) -> np.ndarray:
    """WoE design matrix: one row per record, one column per characteristic."""
    n = len(records)
    X = np.empty((n, len(characteristics)))
    for j, ch in enumerate(characteristics):
        values = [characteristic_input(r, ch) for r in records]
        X[:, j] = ch.woe_array(values, unfamiliar)
    return X


def encode_record(
    record: Application,
    characteristics: Sequence[Characteristic],
    unfamiliar: str = "average",
) -> np.ndarray:
    """WoE vector of a single application."""
    values = [characteristic_input(record, ch) for ch in characteristics]
    return binning.encode(values, characteristics, unfamiliar)


@dataclass
class Scorecard:
    """Fitted characteristics plus a trained model; scores applications."""

    characteristics: list[Characteristic]
    model: object
    unfamiliar: str = "average"
    strategy: str = "full_window"
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(ch.name for ch in self.characteristics)

    def score(self, records: Sequence[Application]) -> np.ndarray:
        X = encode_records(records, self.characteristics, self.unfamiliar)
        if isinstance(self.model, MonthlyEnsemble):
            months = np.array([month_of_year(r.month) for r in records])
            if self.model.combine == "average":
                stacked = np.stack([
                    self.model.models[m].predict(X) for m in range(1, 13)
                ])
                return stacked.mean(axis=0)
            out = np.empty(len(records))
            for m in range(1, 13):
                sel = months == m
                if sel.any():
                    out[sel] = self.model.models[m].predict(X[sel])
            return out
        return self.model.predict(X)


def make_trainer(
    specs: Sequence[CharacteristicSpec],
    binning_config: BinningConfig = BinningConfig(),
    logistic_config: LogisticConfig = LogisticConfig(),
    trainer_kind: str = "logistic",
    adaboost_rounds: int = 40,
    unfamiliar: str = "average",
) -> Callable[[Sequence[Application], Sequence[int]], Scorecard]:
    """Record-level trainer: refits characteristics and the model each call.

    Suitable for cross-validation and the noise-cleaning strategy, where
    binning must never see validation rows.
    """
    if trainer_kind not in ("logistic", "adaboost"):
        raise ScorecardError(f"unknown trainer {trainer_kind!r}")

    def trainer(records: Sequence[Application], labels) -> Scorecard:
        chars = fit_characteristics(records, labels, specs, binning_config)
        X = encode_records(records, chars, unfamiliar)
        names = [ch.name for ch in chars]
        if trainer_kind == "logistic":
            model = models.train_logistic(X, labels, logistic_config, names)
        else:
            model = models.train_adaboost(X, labels, adaboost_rounds, names)
        return Scorecard(chars, model, unfamiliar)

    return trainer


def forward_select_characteristics(
    candidates: Sequence[CharacteristicSpec],
    records: Sequence[Application],
    labels: Sequence[int],
    k: int,
    seed: int,
    binning_config: BinningConfig = BinningConfig(),
    logistic_config: LogisticConfig = LogisticConfig(),
    trainer_kind: str = "logistic",
    epsilon: float = 0.0,
) -> tuple[list[CharacteristicSpec], list[models.SelectionStep]]:
    """Greedy CV-driven selection over characteristic specs.

    Candidates are added while the mean k-fold CV AUC improves by more
    than ``epsilon``; binning is refit inside every fold. Ties break by
    the candidate's standalone IV on the full sample, then by name.
    """
    by_name = {s.name: s for s in candidates}
    plain = [s for s in candidates if s.kind != "interaction"]
    iv_by_name: dict[str, float] = {}
    full = fit_characteristics(
        records, labels,
        plain + [s for s in candidates if s.kind == "interaction"],
        binning_config,
    )
    for ch in full:
        iv_by_name[ch.name] = ch.iv

    def resolve(names: tuple[str, ...]) -> list[CharacteristicSpec]:
        chosen = [by_name[n] for n in names]
        # pull in any plain parents an interaction needs, parents first
        needed: list[CharacteristicSpec] = []
        for s in chosen:
            if s.kind == "interaction":
                for src in s.sources:
                    parent = by_name.get(src) or spec_by_source(plain, src)
                    if parent is None:
                        raise ScorecardError(f"{s.name}: no plain spec for {src!r}")
                    if parent not in needed:
                        needed.append(parent)
        ordered = needed + [s for s in chosen if s not in needed]
        return ordered

    def evaluate(names: tuple[str, ...]) -> float:
        specs = resolve(names)
        feature_names = [by_name[n].name for n in names]

        def trainer(train_records, train_labels):
            chars = fit_characteristics(train_records, train_labels, specs,
                                        binning_config)
            selected = [ch for ch in chars if ch.name in feature_names]
            X = encode_records(train_records, selected)
            if trainer_kind == "logistic":
                model = models.train_logistic(X, train_labels, logistic_config,
                                              [c.name for c in selected])
            else:
                model = models.train_adaboost(X, train_labels, 40,
                                              [c.name for c in selected])
            return Scorecard(selected, model)

        return kfold_cv(records, labels, k, trainer, seed).mean

    names, trace = models.forward_select(
        [s.name for s in candidates], evaluate, epsilon, iv_by_name
    )
    return [by_name[n] for n in names], trace


def spec_by_source(specs: Sequence[CharacteristicSpec], source: str):
    for s in specs:
        if s.kind != "interaction" and s.sources == (source,):
            return s
    return None


def characteristic_psi(
    characteristics: Sequence[Characteristic],
    baseline: Sequence[Application],
    comparison: Sequence[Application],
    epsilon: float = 1e-4,
) -> PsiReport:
    """Stability of each characteristic's bin distribution across windows.

    Records a characteristic cannot place (unfamiliar tokens, values out
    of the fitted range) are pooled in an extra slot, so new codes show up
    as drift instead of disappearing.
    """
    if not baseline or not comparison:
        raise ScorecardError("both windows need records for PSI")
    values: dict[str, float] = {}
    for ch in characteristics:
        k = len(ch.bins) + 1  # final slot: unassigned
        dists = []
        for window in (baseline, comparison):
            idx = ch.locate_array([characteristic_input(r, ch) for r in window])
            idx = np.where(idx >= 0, idx, k - 1)
            counts = np.bincount(idx, minlength=k).astype(float)
            dists.append(counts / counts.sum())
        values[ch.name] = psi(dists[0], dists[1], epsilon)
    return PsiReport(values=values, baseline_label="modeling",
                     comparison_label="holdout")
