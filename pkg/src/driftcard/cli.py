"""Command-line pipeline: synth, ingest, bin, train, evaluate, calibrate,
forecast, report, and the end-to-end pipeline command.

Configuration is an INI file; every key has a default, and command-line
flags override config values. All stage outputs are plain text (plus PNG
figures on the report path), written atomically and free of timestamps,
so identical config and seed reproduce identical artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import binning, calibration, dataset, evaluation, models, reporting, scorecard
from ._io import float_repr, write_text_atomic
from .periods import (
    month_label,
    parse_month,
    parse_quarter,
    quarter_label,
    quarter_of_month,
)
from . import synthgen


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


DEFAULTS: dict[str, dict[str, str]] = {
    "data": {
        "path": "",
        "delimiter": "comma",
        "modeling_window": "2009-01:2010-12",
        "holdout_window": "2011-01:2011-12",
        "test_fraction": "0.25",
        "split_seed": "2013",
    },
    "cleansing": {
        "age_min": "18",
        "age_max": "99",
        "income_min": "0",
        "income_max": "10000000",
        "due_day_min": "1",
        "due_day_max": "31",
        "rare_class_threshold": "100",
        "text_normalization": "true",
        "inflation_factors": "",
    },
    "binning": {
        "max_pre_bins": "20",
        "min_bin_fraction": "0.02",
        "monotonic_woe": "true",
    },
    "model": {
        "trainer": "logistic",
        "characteristics": (
            "age,monthly_income,time_at_address,time_at_employer,"
            "occupation_code,marital_status,income_proof_type,geography,"
            "due_day,previous_credit"
        ),
        "interactions": "",
        "strategy": "full_window",
        "ttd_window": "",
        "posterior_threshold": "0.05",
        "monthly_combine": "route",
        "selection": "none",
        "selection_epsilon": "0.0",
        "ridge": "0.0",
        "tolerance": "1e-8",
        "max_iterations": "100",
        "adaboost_rounds": "40",
        "unfamiliar_handling": "average",
        "use_income_adjusted": "true",
    },
    "cv": {
        "enabled": "true",
        "k": "10",
        "seed": "2013",
    },
    "calibration": {
        "scenario": "2",
        "uplift_factor": "1.01",
        "uplift_months": "2",
        "mode": "auto",
        "predictor": "",
        "abnormal_quarters": "",
        "fit_window": "",
        "predictor_lag": "1",
    },
    "report": {
        "figures": "true",
    },
    "synth": {
        "n_records": "20000",
        "seed": "7",
        "start_month": "2009-01",
        "n_months": "36",
        "base_default_rate": "0.273",
        "income_inflation": "0.06",
        "new_code_rate": "0.05",
        "new_code_months": "12",
        "invalid_age_rate": "0.0005",
        "invalid_due_day_rate": "0.0002",
        "macro_series": "cards_default:0.82,inflation_rate:0.72,gdp:-0.2",
        "abnormal": "",
    },
}


def load_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if path:
        read = cfg.read(path)
        if not read:
            raise StageError("config", f"config file not found: {path}")
    return cfg


def _delimiter(cfg) -> str:
    raw = cfg.get("data", "delimiter")
    if raw not in ("comma", "tab"):
        raise StageError("config", "delimiter must be 'comma' or 'tab'")
    return "," if raw == "comma" else "\t"


def _month_range(text: str) -> dataset.MonthRange:
    try:
        a, b = text.split(":")
        return dataset.MonthRange(parse_month(a), parse_month(b))
    except ValueError as err:
        raise StageError("config", f"bad month window {text!r}: {err}") from err


def _quarter_window(text: str) -> tuple[int, int] | None:
    if not text:
        return None
    a, b = text.split(":")
    return parse_quarter(a), parse_quarter(b)


def _inflation_factors(cfg) -> dict[int, float] | None:
    raw = cfg.get("cleansing", "inflation_factors").strip()
    if not raw:
        return None
    out: dict[int, float] = {}
    for part in raw.split(","):
        year, factor = part.split(":")
        out[int(year.strip())] = float(factor)
    return out


def _policy(cfg) -> dataset.CleansingPolicy:
    g = lambda k: cfg.get("cleansing", k)
    return dataset.CleansingPolicy(
        age_valid_range=(float(g("age_min")), float(g("age_max"))),
        income_valid_range=(float(g("income_min")), float(g("income_max"))),
        due_day_valid_range=(int(g("due_day_min")), int(g("due_day_max"))),
        rare_class_threshold=int(g("rare_class_threshold")),
        text_normalization=cfg.getboolean("cleansing", "text_normalization"),
    )


def _binning_config(cfg) -> binning.BinningConfig:
    return binning.BinningConfig(
        max_pre_bins=cfg.getint("binning", "max_pre_bins"),
        min_bin_fraction=cfg.getfloat("binning", "min_bin_fraction"),
        monotonic_woe=cfg.getboolean("binning", "monotonic_woe"),
    )


def _logistic_config(cfg) -> models.LogisticConfig:
    return models.LogisticConfig(
        tolerance=cfg.getfloat("model", "tolerance"),
        max_iterations=cfg.getint("model", "max_iterations"),
        ridge=cfg.getfloat("model", "ridge"),
    )


def _summary(command: str, **fields) -> dict:
    payload = {"command": command, **fields}
    print("summary: " + json.dumps(payload, sort_keys=True))
    return payload


def _load_cleansed(path: Path, cfg):
    """Parse a cleansed file, picking up the extra derived columns."""
    delim = _delimiter(cfg)
    text = path.read_text(encoding="utf-8")
    header = text.splitlines()[0].split(delim) if text else []
    extra_numeric = tuple(c for c in ("income_adjusted",) if c in header)
    extra_nominal = tuple(c for c in ("geography",) if c in header)
    schema = dataset.DatasetSchema(
        numeric=dataset.DEFAULT_SCHEMA.numeric + extra_numeric,
        nominal=dataset.DEFAULT_SCHEMA.nominal + extra_nominal,
        binary=dataset.DEFAULT_SCHEMA.binary,
    )
    records, diagnostics = dataset.parse_dataset(text, schema, delim)
    if diagnostics:
        raise StageError("data", f"{path.name}: {len(diagnostics)} bad rows")
    return records, schema


def _spec_lists(cfg, schema) -> tuple[list[scorecard.CharacteristicSpec], list[str]]:
    """(ordered fit specs incl. auto-added parents, model feature names)."""
    extra_numeric = tuple(c for c in ("income_adjusted",) if c in schema.numeric)
    names = [c.strip() for c in cfg.get("model", "characteristics").split(",")
             if c.strip()]
    interactions = [i.strip() for i in cfg.get("model", "interactions").split(",")
                    if i.strip()]
    if (cfg.getboolean("model", "use_income_adjusted")
            and "income_adjusted" in schema.numeric):
        swap = lambda n: "income_adjusted" if n == "monthly_income" else n
        names = [swap(n) for n in names]
        interactions = [
            "*".join(swap(p.strip()) for p in expr.split("*"))
            for expr in interactions
        ]
    specs: dict[str, scorecard.CharacteristicSpec] = {}
    feature_names: list[str] = []
    for n in names:
        spec = scorecard.spec_from_expression(n, schema, extra_numeric)
        specs[spec.name] = spec
        feature_names.append(spec.name)
    for expr in interactions:
        spec = scorecard.spec_from_expression(expr, schema, extra_numeric)
        if spec.kind != "interaction":
            raise StageError("config", f"{expr!r} is not an interaction")
        for src in spec.sources:  # parents must be fitted, though not
            if src not in specs:  # necessarily used as model features
                specs[src] = scorecard.spec_from_expression(src, schema, extra_numeric)
        specs[spec.name] = spec
        feature_names.append(spec.name)
    ordered = [s for s in specs.values() if s.kind != "interaction"]
    ordered += [s for s in specs.values() if s.kind == "interaction"]
    return ordered, feature_names


def _split_modeling(records, cfg):
    """(train, test) split of the labeled modeling window, deterministic."""
    fraction = cfg.getfloat("data", "test_fraction")
    seed = cfg.getint("data", "split_seed")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 9])))
    idx = np.arange(len(records))
    rng.shuffle(idx)
    n_test = int(round(fraction * len(records)))
    test_idx = np.sort(idx[:n_test])
    train_idx = np.sort(idx[n_test:])
    return [records[i] for i in train_idx], [records[i] for i in test_idx]


# -- stages -------------------------------------------------------------------

def run_synth(cfg, out: Path) -> dict:
    spec = synthgen.PopulationSpec(
        n_records=cfg.getint("synth", "n_records"),
        start_month=cfg.get("synth", "start_month"),
        n_months=cfg.getint("synth", "n_months"),
        base_default_rate=cfg.getfloat("synth", "base_default_rate"),
        income_inflation=cfg.getfloat("synth", "income_inflation"),
        new_code_rate=cfg.getfloat("synth", "new_code_rate"),
        new_code_months=cfg.getint("synth", "new_code_months"),
        invalid_age_rate=cfg.getfloat("synth", "invalid_age_rate"),
        invalid_due_day_rate=cfg.getfloat("synth", "invalid_due_day_rate"),
    )
    seed = cfg.getint("synth", "seed")
    records = synthgen.generate_population(spec, seed)
    delim = _delimiter(cfg)
    write_text_atomic(out / "applications.csv",
                      dataset.write_dataset(records, delimiter=delim))
    series = synthgen.realized_default_series(records)
    write_text_atomic(out / "default_series.csv",
                      calibration.default_series_to_text(series))

    abnormal = {}
    for part in cfg.get("synth", "abnormal").split(","):
        part = part.strip()
        if part:
            name, quarter = part.split(":")
            abnormal[name.strip()] = parse_quarter(quarter)
    macro_names = []
    for i, part in enumerate(cfg.get("synth", "macro_series").split(",")):
        part = part.strip()
        if not part:
            continue
        name, target = part.split(":")
        target_r = float(target)
        mspec = synthgen.MacroSpec(
            name=name.strip(),
            loading=1.0 if target_r >= 0 else -1.0,
            target_correlation=target_r,
        )
        series_m = synthgen.generate_macro(mspec, series, seed + i)
        if name.strip() in abnormal:
            series_m = synthgen.inject_abnormal(series_m, abnormal[name.strip()])
        write_text_atomic(out / f"macro_{name.strip()}.csv",
                          calibration.macro_series_to_text(series_m))
        macro_names.append(name.strip())
    bad_rate = float(np.mean([r.label for r in records]))
    return _summary("synth", records=len(records), bad_rate=round(bad_rate, 4),
                    macro_series=macro_names, out=str(out))


def run_ingest(cfg, out: Path, data: str | None = None) -> dict:
    source = data or cfg.get("data", "path") or str(out / "applications.csv")
    path = Path(source)
    if not path.exists():
        raise StageError("ingest", f"input not found: {source}")
    delim = _delimiter(cfg)
    records, diagnostics = dataset.parse_dataset(
        path.read_text(encoding="utf-8"), dataset.DEFAULT_SCHEMA, delim
    )
    diag_lines = ["line,column,message"]
    diag_lines += [f"{d.line},{d.column},{d.message}" for d in diagnostics]
    write_text_atomic(out / "ingest_diagnostics.csv", "\n".join(diag_lines) + "\n")

    window = _month_range(cfg.get("data", "modeling_window"))
    modeling, rest = dataset.temporal_split(records, window)
    policy = _policy(cfg)
    fit = dataset.cleanse(modeling, policy)
    applied = dataset.apply_cleansing(rest, policy, fit.class_maps)
    report = fit.report.merge(applied.report)
    by_id = {r.id: r for r in fit.records + applied.records}
    cleansed = [by_id[r.id] for r in records]

    factors = _inflation_factors(cfg)
    extra_numeric: tuple[str, ...] = ()
    if factors is not None:
        cleansed = dataset.adjust_income(cleansed, factors)
        extra_numeric = ("income_adjusted",)
    write_text_atomic(
        out / "cleansed.csv",
        dataset.write_dataset(cleansed, delimiter=delim,
                              extra_numeric=extra_numeric,
                              extra_nominal=(dataset.GEOGRAPHY_NAME,)),
    )
    report_lines = ["variable,disposition,count"] + report.to_lines()
    write_text_atomic(out / "cleansing_report.csv", "\n".join(report_lines) + "\n")
    return _summary("ingest", records=len(cleansed), diagnostics=len(diagnostics),
                    modeling_records=len(modeling), out=str(out))


def run_bin(cfg, out: Path, data: str | None = None) -> dict:
    path = Path(data or (out / "cleansed.csv"))
    if not path.exists():
        raise StageError("bin", f"cleansed data not found: {path}")
    records, schema = _load_cleansed(path, cfg)
    window = _month_range(cfg.get("data", "modeling_window"))
    modeling, _ = dataset.temporal_split(records, window)
    labeled = [r for r in modeling if r.label is not None]
    if not labeled:
        raise StageError("bin", "modeling window holds no labeled records")
    # fit on the train partition so the test split stays out of fit
    train_records, _ = _split_modeling(labeled, cfg)
    labels = [r.label for r in train_records]
    specs, _ = _spec_lists(cfg, schema)
    chars = scorecard.fit_characteristics(train_records, labels, specs,
                                          _binning_config(cfg))
    binning.write_characteristics(out / "characteristics.txt", chars)
    rows = ["name,iv,n_bins"]
    for ch in sorted(chars, key=lambda c: (-c.iv, c.name)):
        rows.append(f"{ch.name},{float_repr(ch.iv)},{len(ch.bins)}")
    write_text_atomic(out / "iv_ranking.csv", "\n".join(rows) + "\n")
    return _summary("bin", characteristics=len(chars),
                    fitted_on=len(train_records), out=str(out))


def _model_trainer_fn(cfg, chars, feature_names):
    """Matrix-level trainer over prefitted characteristics."""
    unfamiliar = cfg.get("model", "unfamiliar_handling")
    kind = cfg.get("model", "trainer")
    selected = [ch for ch in chars if ch.name in feature_names]

    def trainer(records, labels):
        X = scorecard.encode_records(records, selected, unfamiliar)
        if kind == "logistic":
            model = models.train_logistic(X, labels, _logistic_config(cfg),
                                          [c.name for c in selected])
        elif kind == "adaboost":
            model = models.train_adaboost(
                X, labels, cfg.getint("model", "adaboost_rounds"),
                [c.name for c in selected])
        else:
            raise StageError("train", f"unknown trainer {kind!r}")
        return scorecard.Scorecard(selected, model, unfamiliar)

    return trainer, selected


def run_train(cfg, out: Path, data: str | None = None,
              characteristics: str | None = None) -> dict:
    path = Path(data or (out / "cleansed.csv"))
    chars_path = Path(characteristics or (out / "characteristics.txt"))
    for p, stage in ((path, "cleansed data"), (chars_path, "characteristics")):
        if not p.exists():
            raise StageError("train", f"{stage} not found: {p}")
    records, schema = _load_cleansed(path, cfg)
    window = _month_range(cfg.get("data", "modeling_window"))
    modeling, _ = dataset.temporal_split(records, window)
    labeled = [r for r in modeling if r.label is not None]
    train_records, _ = _split_modeling(labeled, cfg)
    labels = np.array([r.label for r in train_records])

    chars = binning.read_characteristics(chars_path)
    _, feature_names = _spec_lists(cfg, schema)

    if cfg.get("model", "selection") == "forward":
        specs, _ = _spec_lists(cfg, schema)
        by_name = {s.name: s for s in specs}
        candidates = [by_name[n] for n in feature_names]
        chosen, _trace = scorecard.forward_select_characteristics(
            candidates, train_records, labels,
            k=cfg.getint("cv", "k"), seed=cfg.getint("cv", "seed"),
            binning_config=_binning_config(cfg),
            logistic_config=_logistic_config(cfg),
            trainer_kind=cfg.get("model", "trainer"),
            epsilon=cfg.getfloat("model", "selection_epsilon"),
        )
        feature_names = [s.name for s in chosen]

    strategy = models.TrainingStrategy(
        kind=cfg.get("model", "strategy"),
        window=cfg.get("model", "ttd_window"),
        posterior_threshold=cfg.getfloat("model", "posterior_threshold"),
        combine=cfg.get("model", "monthly_combine"),
    )
    trainer, selected = _model_trainer_fn(cfg, chars, feature_names)
    removed: list[int] = []
    if strategy.kind == "through_the_door":
        if not strategy.window:
            raise StageError("train", "through_the_door needs ttd_window")
        ttd, _ = dataset.temporal_split(train_records, _month_range(strategy.window))
        if not ttd:
            raise StageError("train", "ttd_window selects no records")
        fitted = trainer(ttd, np.array([r.label for r in ttd]))
        model = fitted.model
    elif strategy.kind == "monthly_ensemble":
        months = [r.application_date.month for r in train_records]
        bundle = models.monthly_ensemble(
            train_records, labels, months,
            lambda recs, ys: trainer(recs, ys).model,
            combine=strategy.combine,
        )
        model = bundle
    elif strategy.kind == "noise_cleaning":
        fitted, removed = models.clean_and_retrain(
            trainer, train_records, labels, strategy.posterior_threshold
        )
        model = fitted.model
        lines = ["id"] + [train_records[i].id for i in removed]
        write_text_atomic(out / "removed_records.csv", "\n".join(lines) + "\n")
    else:
        fitted = trainer(train_records, labels)
        model = fitted.model

    meta = {
        "strategy": strategy.kind,
        "window": strategy.window or cfg.get("data", "modeling_window"),
        "unfamiliar_handling": cfg.get("model", "unfamiliar_handling"),
        "features": ",".join(feature_names),
    }
    models.write_model(out / "model.txt", model,
                       characteristics_file=chars_path.name, meta=meta)
    return _summary("train", strategy=strategy.kind, features=len(feature_names),
                    trained_on=len(train_records), removed=len(removed),
                    out=str(out))


def _load_scorecard(model_path: Path, cfg) -> scorecard.Scorecard:
    model, chars_file, meta = models.read_model(model_path)
    chars_path = model_path.parent / chars_file
    if not chars_path.exists():
        raise StageError("evaluate", f"characteristics file not found: {chars_path}")
    chars = {ch.name: ch for ch in binning.read_characteristics(chars_path)}
    names = meta.get("features", "").split(",") if meta.get("features") else []
    if not names:
        if isinstance(model, models.MonthlyEnsemble):
            names = list(model.models[1].feature_names)
        else:
            names = list(model.feature_names)
    missing = [n for n in names if n not in chars]
    if missing:
        raise StageError("evaluate", f"characteristics missing for {missing}")
    return scorecard.Scorecard(
        [chars[n] for n in names], model,
        unfamiliar=meta.get("unfamiliar_handling", "average"),
        strategy=meta.get("strategy", ""),
        meta=meta,
    )


def _score_rows(card, records, window_name) -> list[str]:
    if not records:
        return []
    scores = card.score(records)
    rows = []
    for rec, s in zip(records, scores):
        label = "" if rec.label is None else str(rec.label)
        rows.append(
            f"{rec.id},{window_name},{month_label(rec.month)},{float_repr(float(s))},{label}"
        )
    return rows


def run_evaluate(cfg, out: Path, data: str | None = None,
                 model: str | None = None, skip_cv: bool = False) -> dict:
    path = Path(data or (out / "cleansed.csv"))
    model_path = Path(model or (out / "model.txt"))
    for p, what in ((path, "cleansed data"), (model_path, "model")):
        if not p.exists():
            raise StageError("evaluate", f"{what} not found: {p}")
    records, schema = _load_cleansed(path, cfg)
    card = _load_scorecard(model_path, cfg)

    modeling_window = _month_range(cfg.get("data", "modeling_window"))
    holdout_window = _month_range(cfg.get("data", "holdout_window"))
    modeling, _ = dataset.temporal_split(records, modeling_window)
    holdout, _ = dataset.temporal_split(records, holdout_window)
    labeled = [r for r in modeling if r.label is not None]
    train_records, test_records = _split_modeling(labeled, cfg)

    rows: list[tuple[str, str, object]] = []
    score_lines = ["id,window,month,score,label"]
    score_lines += _score_rows(card, train_records, "train")
    auc_test = None
    if test_records:
        test_scores = card.score(test_records)
        auc_test = evaluation.auc(test_scores, [r.label for r in test_records]).auc
        rows.append(("auc", "test", auc_test))
        rows.append(("gini", "test", 2.0 * auc_test - 1.0))
        score_lines += _score_rows(card, test_records, "test")
    holdout_labeled = [r for r in holdout if r.label is not None]
    auc_holdout = None
    if holdout_labeled:
        hold_scores = card.score(holdout_labeled)
        auc_holdout = evaluation.auc(
            hold_scores, [r.label for r in holdout_labeled]
        ).auc
        rows.append(("auc", "holdout", auc_holdout))
        rows.append(("gini", "holdout", 2.0 * auc_holdout - 1.0))
    score_lines += _score_rows(card, holdout, "holdout")
    if auc_test is not None and auc_holdout is not None:
        rows.append(("degradation", "test_to_holdout",
                     evaluation.degradation(auc_test, auc_holdout)))

    if cfg.getboolean("cv", "enabled") and not skip_cv:
        specs, feature_names = _spec_lists(cfg, schema)
        trainer = scorecard.make_trainer(
            specs, _binning_config(cfg), _logistic_config(cfg),
            trainer_kind=cfg.get("model", "trainer"),
            adaboost_rounds=cfg.getint("model", "adaboost_rounds"),
            unfamiliar=cfg.get("model", "unfamiliar_handling"),
        )
        cv = evaluation.kfold_cv(
            labeled, [r.label for r in labeled],
            cfg.getint("cv", "k"), trainer, cfg.getint("cv", "seed"),
        )
        for i, fold_auc in enumerate(cv.fold_aucs, start=1):
            rows.append(("cv", f"fold_{i}", fold_auc))
        rows.append(("cv", "mean", cv.mean))
        rows.append(("cv", "std", cv.std))

    if holdout:
        psi_report = scorecard.characteristic_psi(
            card.characteristics, labeled, holdout
        )
        for name, value in sorted(psi_report.values.items()):
            rows.append(("psi", name, value))

    reporting.write_metrics(out / "metrics.csv", rows)
    write_text_atomic(out / "scores.csv", "\n".join(score_lines) + "\n")
    return _summary(
        "evaluate",
        auc_test=None if auc_test is None else round(auc_test, 4),
        auc_holdout=None if auc_holdout is None else round(auc_holdout, 4),
        out=str(out),
    )


def run_forecast(cfg, out: Path, default_series: str | None = None,
                 macro: list[str] | None = None) -> dict:
    series_path = Path(default_series or (out / "default_series.csv"))
    if not series_path.exists():
        raise StageError("forecast", f"default series not found: {series_path}")
    full = calibration.read_default_series(series_path)
    window = _month_range(cfg.get("data", "modeling_window"))
    history = full.window(window.start, window.end)

    macro_paths = [Path(p) for p in macro] if macro else sorted(
        out.glob("macro_*.csv")
    )
    if not macro_paths:
        raise StageError("forecast", "no macro series supplied or found")
    candidates = []
    for p in macro_paths:
        series = calibration.read_macro_series(p)
        if series.name.startswith("macro_"):
            series = dataclasses.replace(series, name=series.name[len("macro_"):])
        candidates.append(series)

    repairs: dict[str, int] = {}
    for part in cfg.get("calibration", "abnormal_quarters").split(","):
        part = part.strip()
        if part:
            name, quarter = part.split(":")
            repairs[name.strip()] = parse_quarter(quarter)
    candidates = [
        calibration.repair_abnormal(c, [repairs[c.name]]) if c.name in repairs else c
        for c in candidates
    ]

    fit_window = _quarter_window(cfg.get("calibration", "fit_window")) or (
        quarter_of_month(window.start), quarter_of_month(window.end)
    )
    fits, diagnostics = calibration.rank_predictors(history, candidates, fit_window)
    if not fits:
        raise StageError("forecast", f"no usable predictor: {diagnostics}")
    rank_rows = ["predictor,correlation,r_square,slope,intercept,n_points"]
    for f in fits:
        rank_rows.append(
            f"{f.predictor_name},{float_repr(f.correlation)},{float_repr(f.r_square)},"
            f"{float_repr(f.slope)},{float_repr(f.intercept)},{f.n_points}"
        )
    write_text_atomic(out / "predictor_ranking.csv", "\n".join(rank_rows) + "\n")

    wanted = cfg.get("calibration", "predictor").strip()
    if wanted:
        chosen = next((f for f in fits if f.predictor_name == wanted), None)
        if chosen is None:
            raise StageError("forecast", f"predictor {wanted!r} not among candidates")
    else:
        chosen = fits[0]
    predictor = next(c for c in candidates if c.name == chosen.predictor_name)

    scenario = calibration.Scenario(
        variant=cfg.getint("calibration", "scenario"),
        uplift_factor=cfg.getfloat("calibration", "uplift_factor"),
        uplift_months=cfg.getint("calibration", "uplift_months"),
    )
    forecast = calibration.forecast_default(
        scenario, chosen, predictor, history=history,
        predictor_lag=cfg.getint("calibration", "predictor_lag"),
    )
    rows = ["month,estimate"]
    rows += [f"{month_label(m)},{float_repr(r)}"
             for m, r in zip(forecast.months, forecast.estimates)]
    rows.append(f"mean,{float_repr(forecast.mean())}")
    write_text_atomic(out / "forecast.csv", "\n".join(rows) + "\n")
    return _summary(
        "forecast", scenario=scenario.variant, predictor=chosen.predictor_name,
        correlation=round(chosen.correlation, 4),
        mean=round(forecast.mean(), 6), out=str(out),
    )


def _read_forecast(path: Path) -> calibration.DefaultSeries:
    months: list[int] = []
    rates: list[float] = []
    for line in path.read_text(encoding="utf-8").splitlines()[1:]:
        name, value = line.split(",")
        if name == "mean":
            continue
        months.append(parse_month(name))
        rates.append(float(value))
    return calibration.DefaultSeries(tuple(months), tuple(rates))


def run_calibrate(cfg, out: Path, scores: str | None = None,
                  forecast: str | None = None) -> dict:
    scores_path = Path(scores or (out / "scores.csv"))
    forecast_path = Path(forecast or (out / "forecast.csv"))
    for p, what in ((scores_path, "scores"), (forecast_path, "forecast")):
        if not p.exists():
            raise StageError("calibrate", f"{what} not found: {p}")
    target_series = _read_forecast(forecast_path)
    targets = dict(zip(target_series.months, target_series.rates))

    ids: list[str] = []
    months: list[int] = []
    raw: list[float] = []
    labels: list[int | None] = []
    for line in scores_path.read_text(encoding="utf-8").splitlines()[1:]:
        rid, window, month, score, label = line.split(",")
        if window != "holdout":
            continue
        ids.append(rid)
        months.append(parse_month(month))
        raw.append(float(score))
        labels.append(int(label) if label != "" else None)
    if not ids:
        raise StageError("calibrate", "no holdout scores to calibrate")
    raw_arr = np.array(raw)

    mode = cfg.get("calibration", "mode")
    if mode == "auto":
        mode = "global" if cfg.getint("calibration", "scenario") == 2 else "monthly"
    if mode == "global":
        target = float(np.mean(list(targets.values())))
        shift, adjusted = calibration.shift_scores(raw_arr, target)
    elif mode == "monthly":
        missing = sorted(set(months) - set(targets))
        if missing:
            raise StageError(
                "calibrate",
                f"forecast lacks months {[month_label(m) for m in missing]}",
            )
        shift, adjusted = calibration.shift_scores_by_month(raw_arr, months, targets)
    else:
        raise StageError("calibrate", f"unknown mode {mode!r}")

    lines = ["id,month,raw,adjusted,label"]
    for rid, m, r, a, lab in zip(ids, months, raw_arr, adjusted, labels):
        lab_text = "" if lab is None else str(lab)
        lines.append(
            f"{rid},{month_label(m)},{float_repr(float(r))},{float_repr(float(a))},{lab_text}"
        )
    write_text_atomic(out / "adjusted_scores.csv", "\n".join(lines) + "\n")

    cal_rows: list[tuple[str, str, object]] = []
    for key in sorted(shift.offsets, key=str):
        label_key = key if isinstance(key, str) else month_label(key)
        cal_rows.append(("offset", label_key, shift.offsets[key]))
        cal_rows.append(("target", label_key, shift.targets[key]))
    cal_rows.append(("calibration", "achieved_error", shift.achieved_error))
    cal_rows.append(("calibration", "mean_adjusted", float(adjusted.mean())))
    cal_rows.append(("calibration", "mean_raw", float(raw_arr.mean())))

    d_value = None
    if all(lab is not None for lab in labels) and len(set(months)) == 12:
        observed = calibration.monthly_default_series(months, [int(l) for l in labels])
        est = [targets[m] for m in observed.months]
        if all(r > 0 for r in observed.rates):
            result = calibration.distance_d(est, observed.rates)
            d_value = result.d
            cal_rows.append(("distance", "d", result.d))
            cal_rows.append(("distance", "valid", int(result.valid)))
            cal_rows.append(("distance", "mean_estimate", result.mean_estimate))
            cal_rows.append(("distance", "mean_observed", result.mean_observed))
    reporting.write_metrics(out / "calibration.csv", cal_rows)
    return _summary(
        "calibrate", mode=mode, mean_adjusted=round(float(adjusted.mean()), 6),
        distance_d=None if d_value is None else round(d_value, 6), out=str(out),
    )


def run_report(cfg, out: Path, run_dir: str | None = None) -> dict:
    src = Path(run_dir) if run_dir else out
    rows: list[tuple[str, str, object]] = []
    for name in ("metrics.csv", "calibration.csv"):
        path = src / name
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines()[1:]:
                section, key, value = line.split(",", 2)
                rows.append((section, key, value))
    reporting.write_metrics(out / "report.csv", rows)

    figures: list[str] = []
    if cfg.getboolean("report", "figures"):
        series_path = src / "default_series.csv"
        forecast_path = src / "forecast.csv"
        if series_path.exists():
            full = calibration.read_default_series(series_path)
            window = _month_range(cfg.get("data", "modeling_window"))
            holdout = _month_range(cfg.get("data", "holdout_window"))
            history = full.window(window.start, window.end)
            observed = full.window(holdout.start, holdout.end)
            forecast = _read_forecast(forecast_path) if forecast_path.exists() else None
            reporting.plot_default_series(
                out / "fig_default_forecast.png", history, forecast,
                observed if observed.months else None,
            )
            figures.append("fig_default_forecast.png")
        adjusted_path = src / "adjusted_scores.csv"
        if adjusted_path.exists():
            raw, adj = [], []
            for line in adjusted_path.read_text(encoding="utf-8").splitlines()[1:]:
                _, _, r, a, _ = line.split(",")
                raw.append(float(r))
                adj.append(float(a))
            target = float(np.mean(adj))
            reporting.plot_score_shift(out / "fig_score_shift.png",
                                       np.array(raw), np.array(adj), target)
            figures.append("fig_score_shift.png")
        scores_path = src / "scores.csv"
        if scores_path.exists():
            curves: dict[str, tuple[list[float], list[int]]] = {}
            for line in scores_path.read_text(encoding="utf-8").splitlines()[1:]:
                _, window_name, _, score, label = line.split(",")
                if label == "" or window_name == "train":
                    continue
                curves.setdefault(window_name, ([], []))
                curves[window_name][0].append(float(score))
                curves[window_name][1].append(int(label))
            curves_np = {
                k: (np.array(v[0]), np.array(v[1]))
                for k, v in sorted(curves.items()) if len(set(v[1])) == 2
            }
            if curves_np:
                reporting.plot_roc(out / "fig_roc.png", curves_np)
                figures.append("fig_roc.png")
        iv_path = src / "iv_ranking.csv"
        if iv_path.exists():
            iv: dict[str, float] = {}
            for line in iv_path.read_text(encoding="utf-8").splitlines()[1:]:
                name, value, _ = line.split(",")
                iv[name] = float(value)
            reporting.plot_iv_ranking(out / "fig_iv.png", iv)
            figures.append("fig_iv.png")
        psi_values = {
            key: float(value) for section, key, value in rows if section == "psi"
        }
        if psi_values:
            reporting.plot_psi(out / "fig_psi.png",
                               evaluation.PsiReport(psi_values, "modeling", "holdout"))
            figures.append("fig_psi.png")
    return _summary("report", rows=len(rows), figures=figures, out=str(out))


def run_pipeline(cfg, out: Path, data: str | None = None) -> dict:
    stages: list[dict] = []
    if data is None and not cfg.get("data", "path"):
        stages.append(run_synth(cfg, out))
    stages.append(run_ingest(cfg, out, data))
    stages.append(run_bin(cfg, out))
    stages.append(run_train(cfg, out))
    stages.append(run_evaluate(cfg, out))
    stages.append(run_forecast(cfg, out))
    stages.append(run_calibrate(cfg, out))
    stages.append(run_report(cfg, out))
    return _summary("pipeline", stages=[s["command"] for s in stages], out=str(out))


# -- argument wiring ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftcard",
        description=(
            "Weight-of-evidence scorecards with a forecast-calibrated "
            "correction for temporal degradation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", default="run", help="output directory")
        return p

    add("synth", "generate a synthetic dataset, default and macro series")
    p = add("ingest", "parse, cleanse and inflation-adjust the raw data")
    p.add_argument("--data", help="raw applications file")
    p = add("bin", "fit characteristics (binning + WoE + IV) on the modeling window")
    p.add_argument("--data", help="cleansed data file")
    p = add("train", "train the stage-1 classifier under the configured strategy")
    p.add_argument("--data", help="cleansed data file")
    p.add_argument("--characteristics", help="fitted characteristics file")
    p = add("evaluate", "score windows, compute AUC/CV/PSI/degradation")
    p.add_argument("--data", help="cleansed data file")
    p.add_argument("--model", help="model file")
    p.add_argument("--auc-test", type=float, help="direct mode: test AUC")
    p.add_argument("--auc-holdout", type=float, help="direct mode: holdout AUC")
    p.add_argument("--skip-cv", action="store_true")
    p = add("forecast", "regress default on the best macro series and forecast")
    p.add_argument("--default-series", help="monthly internal default file")
    p.add_argument("--macro", action="append", help="macro series file (repeatable)")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3))
    p = add("calibrate", "shift holdout scores to the forecast central tendency")
    p.add_argument("--scores", help="scores file from evaluate")
    p.add_argument("--forecast", help="forecast file")
    p.add_argument("--mode", choices=("auto", "global", "monthly"))
    p = add("report", "merge metrics and render figures")
    p.add_argument("--run-dir", help="directory holding earlier stage outputs")
    p = add("pipeline", "run every stage end to end")
    p.add_argument("--data", help="raw applications file (skips synth)")
    p.add_argument("--seed", type=int, help="override the synth seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None))
        if getattr(args, "scenario", None) is not None:
            cfg.set("calibration", "scenario", str(args.scenario))
        if getattr(args, "mode", None) is not None:
            cfg.set("calibration", "mode", args.mode)
        if getattr(args, "seed", None) is not None:
            cfg.set("synth", "seed", str(args.seed))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "synth":
            run_synth(cfg, out)
        elif args.command == "ingest":
            run_ingest(cfg, out, args.data)
        elif args.command == "bin":
            run_bin(cfg, out, args.data)
        elif args.command == "train":
            run_train(cfg, out, args.data, args.characteristics)
        elif args.command == "evaluate":
            if args.auc_test is not None or args.auc_holdout is not None:
                if args.auc_test is None or args.auc_holdout is None:
                    raise StageError(
                        "evaluate", "--auc-test and --auc-holdout go together"
                    )
                value = evaluation.degradation(args.auc_test, args.auc_holdout)
                print(f"degradation,{value}")
                _summary("evaluate", degradation=value)
            else:
                run_evaluate(cfg, out, args.data, args.model, args.skip_cv)
        elif args.command == "forecast":
            run_forecast(cfg, out, args.default_series, args.macro)
        elif args.command == "calibrate":
            run_calibrate(cfg, out, args.scores, args.forecast)
        elif args.command == "report":
            run_report(cfg, out, args.run_dir)
        elif args.command == "pipeline":
            run_pipeline(cfg, out, args.data)
        return 0
    except StageError as err:
        print("error: " + json.dumps(
            {"stage": err.stage, "message": str(err)}, sort_keys=True
        ), file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print("error: " + json.dumps(
            {"stage": getattr(args, "command", "cli"), "message": str(err)},
            sort_keys=True,
        ), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
