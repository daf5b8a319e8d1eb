"""Stage-1 classifiers over WoE features and the training strategies.

The logistic trainer is iteratively reweighted least squares (Newton steps
with step-halving) on a ridge-penalized log-likelihood; the intercept is
never penalized, so the fitted mean prediction matches the training bad
rate. A small mandatory ridge keeps the solve well-posed under perfect
separation, which WoE-encoded data can produce. The boosted alternative is
standard discrete AdaBoost over axis-aligned decision stumps.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit as sigmoid

from ._io import float_repr, write_text_atomic


class ModelError(ValueError):
    pass


class ConvergenceError(ModelError):
    def __init__(self, message: str, gradient_norm: float):
        super().__init__(message)
        self.gradient_norm = gradient_norm


def _clip_probs(p: np.ndarray) -> np.ndarray:
    # keep predictions strictly inside (0, 1)
    return np.clip(p, 1e-15, 1.0 - 1e-15)


@dataclass(frozen=True)
class LogisticConfig:
    tolerance: float = 1e-8
    max_iterations: int = 100
    ridge: float = 0.0
    #: floor applied to the ridge; guards against perfect separation
    min_ridge: float = 1e-6

    @property
    def effective_ridge(self) -> float:
        return max(self.ridge, self.min_ridge)


@dataclass
class LogisticModel:
    intercept: float
    weights: np.ndarray
    feature_names: tuple[str, ...]
    iterations: int = 0
    gradient_norm: float = math.nan
    strategy: str = ""
    window: str = ""
    #: penalized log-likelihood after each accepted step (not serialized)
    ll_trace: tuple[float, ...] = ()

    def predict(self, X: np.ndarray) -> np.ndarray:
        """P(bad) for each row of a WoE matrix, strictly in (0, 1)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.weights.size:
            raise ModelError(
                f"feature dimension mismatch: got {X.shape}, want (*, {self.weights.size})"
            )
        return _clip_probs(sigmoid(self.intercept + X @ self.weights))


def _penalized_loglik(eta: np.ndarray, y: np.ndarray, beta: np.ndarray,
                      ridge: float) -> float:
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * ridge * float(beta[1:] @ beta[1:])


def train_logistic(
    X: np.ndarray,
    y: np.ndarray,
    config: LogisticConfig = LogisticConfig(),
    feature_names: Sequence[str] | None = None,
) -> LogisticModel:
    """Fit a logistic model by IRLS from a zero start.

    Converged when the max-norm of the penalized log-likelihood gradient
    drops to ``tolerance``; the step is halved whenever a Newton step would
    decrease the penalized log-likelihood (beyond float resolution of the
    objective). Deterministic for fixed inputs.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ModelError("X must be (n, p) with one label per row")
    if not ((y == 0).any() and (y == 1).any()):
        raise ModelError("both classes must be present")

    n, p = X.shape
    Xa = np.hstack([np.ones((n, 1)), X])
    ridge = config.effective_ridge
    beta = np.zeros(p + 1)
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0  # intercept unpenalized

    eta = Xa @ beta
    ll = _penalized_loglik(eta, y, beta, ridge)
    trace = [ll]
    grad_norm = math.inf
    for iteration in range(1, config.max_iterations + 1):
        mu = sigmoid(eta)
        grad = Xa.T @ (y - mu) - pen * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= config.tolerance:
            return LogisticModel(
                intercept=float(beta[0]),
                weights=beta[1:].copy(),
                feature_names=tuple(feature_names or (f"x{i}" for i in range(p))),
                iterations=iteration - 1,
                gradient_norm=grad_norm,
                ll_trace=tuple(trace),
            )
        w = mu * (1.0 - mu)
        H = Xa.T @ (Xa * w[:, None]) + np.diag(pen)
        try:
            delta = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as err:
            raise ConvergenceError(f"singular IRLS system: {err}", grad_norm) from err
        # Step-halving on decrease; the slack keeps full Newton steps viable
        # once improvements fall below the objective's float resolution.
        slack = 1e-10 * (1.0 + abs(ll))
        step = 1.0
        while True:
            cand = beta + step * delta
            eta_cand = Xa @ cand
            ll_cand = _penalized_loglik(eta_cand, y, cand, ridge)
            if ll_cand >= ll - slack or step < 1e-12:
                break
            step *= 0.5
        beta, eta, ll = cand, eta_cand, ll_cand
        trace.append(ll)

    raise ConvergenceError(
        f"IRLS did not converge in {config.max_iterations} iterations "
        f"(gradient max-norm {grad_norm:.3e})",
        grad_norm,
    )


def logistic_standard_errors(model: LogisticModel, X: np.ndarray,
                             ridge: float = 0.0) -> np.ndarray:
    """Asymptotic standard errors (intercept first) at the fitted point."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    Xa = np.hstack([np.ones((n, 1)), X])
    mu = sigmoid(Xa @ np.concatenate([[model.intercept], model.weights]))
    w = mu * (1.0 - mu)
    pen = np.full(Xa.shape[1], ridge)
    pen[0] = 0.0
    H = Xa.T @ (Xa * w[:, None]) + np.diag(pen)
    return np.sqrt(np.diag(np.linalg.inv(H)))


def predict(model, X: np.ndarray) -> np.ndarray:
    """Probability of bad for each row; dispatches on the model type."""
    return model.predict(X)


# -- AdaBoost over decision stumps ----------------------------------------

@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    polarity: int  # +1: x > threshold votes bad; -1: inverted

    def votes(self, X: np.ndarray) -> np.ndarray:
        raw = np.where(X[:, self.feature] > self.threshold, 1, -1)
        return self.polarity * raw


@dataclass
class StumpEnsemble:
    rounds: list[tuple[Stump, float, float]]  # (stump, alpha, weighted error)
    feature_names: tuple[str, ...]
    strategy: str = ""
    #: sample-weight totals after each round's renormalization (not serialized)
    weight_sums: tuple[float, ...] = ()

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ModelError(
                f"feature dimension mismatch: got {X.shape}, "
                f"want (*, {len(self.feature_names)})"
            )
        score = np.zeros(X.shape[0])
        for stump, alpha, _ in self.rounds:
            score += alpha * stump.votes(X)
        return score

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _clip_probs(sigmoid(2.0 * self.decision(X)))


def _best_stump(X: np.ndarray, y_pm: np.ndarray, w: np.ndarray) -> tuple[Stump, float]:
    """Lowest weighted-error stump; ties go to the lowest feature/threshold."""
    n, p = X.shape
    best: tuple[float, int, float, int] | None = None
    total_pos = float(w[y_pm > 0].sum())
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cum = np.cumsum(w[order] * y_pm[order])
        cuts = np.flatnonzero(xs[:-1] < xs[1:])
        if cuts.size == 0:
            continue
        # cut after sorted position i: err(x > cut votes bad) =
        # P(bad on the left) + P(good on the right) = total_pos + cum[i] - cum[-1]
        err_plus = total_pos - (cum[-1] - cum[cuts])
        for errs, polarity in ((err_plus, 1), (1.0 - err_plus, -1)):
            k = int(np.argmin(errs))  # first minimum: lowest threshold
            cand = (float(errs[k]), j, float(xs[cuts[k]]), polarity)
            if best is None or cand < best:
                best = cand
    if best is None:
        raise ModelError("no non-constant stump available (all features constant)")
    e, j, threshold, polarity = best
    return Stump(j, threshold, polarity), e


def train_adaboost(
    X: np.ndarray,
    y: np.ndarray,
    rounds: int,
    feature_names: Sequence[str] | None = None,
) -> StumpEnsemble:
    """Discrete AdaBoost: alpha = 0.5*ln((1-err)/err), multiplicative
    reweighting, renormalization each round; stops early at err >= 0.5."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if rounds < 1:
        raise ModelError("rounds must be >= 1")
    if not ((y == 0).any() and (y == 1).any()):
        raise ModelError("both classes must be present")
    n, p = X.shape
    y_pm = 2 * y - 1
    w = np.full(n, 1.0 / n)
    ensemble: list[tuple[Stump, float, float]] = []
    weight_sums: list[float] = []
    for t in range(rounds):
        stump, err = _best_stump(X, y_pm, w)
        if err >= 0.5:
            if t == 0:
                raise ModelError("no stump beats weighted error 0.5")
            break
        eps = min(max(err, 1e-12), 1 - 1e-12)
        alpha = 0.5 * math.log((1.0 - eps) / eps)
        ensemble.append((stump, alpha, err))
        w = w * np.exp(-alpha * y_pm * stump.votes(X))
        w /= w.sum()
        weight_sums.append(float(w.sum()))
    return StumpEnsemble(
        rounds=ensemble,
        feature_names=tuple(feature_names or (f"x{i}" for i in range(p))),
        weight_sums=tuple(weight_sums),
    )


# -- training strategies ----------------------------------------------------

@dataclass(frozen=True)
class TrainingStrategy:
    """One of the four gauged strategies.

    kind: "full_window" | "through_the_door" | "monthly_ensemble"
          | "noise_cleaning"
    """

    kind: str = "full_window"
    window: str = ""
    posterior_threshold: float = 0.05
    combine: str = "route"

    def __post_init__(self) -> None:
        kinds = ("full_window", "through_the_door", "monthly_ensemble",
                 "noise_cleaning")
        if self.kind not in kinds:
            raise ValueError(f"strategy must be one of {kinds}")
        if not 0.0 <= self.posterior_threshold < 0.5:
            raise ValueError("posterior_threshold must be in [0, 0.5)")


def clean_and_retrain(
    trainer: Callable,
    records: Sequence,
    labels: Sequence[int],
    threshold: float = 0.05,
) -> tuple[object, list[int]]:
    """Drop strongly misclassified records and retrain.

    Trains once, removes every record whose predicted posterior of its true
    class falls below ``threshold``, and retrains on the remainder. Returns
    the retrained model and the removed record indices. If removal would
    empty a class the cleaning is aborted with a warning and the first
    model is returned. ``threshold`` 0 reproduces plain training exactly.
    """
    if not 0.0 <= threshold < 0.5:
        raise ModelError("threshold must be in [0, 0.5)")
    y = np.asarray(labels, dtype=int)
    model = trainer(records, y)
    if threshold == 0.0:
        return model, []
    p_bad = np.asarray(model.score(records))
    p_true = np.where(y == 1, p_bad, 1.0 - p_bad)
    removed = np.flatnonzero(p_true < threshold)
    if removed.size == 0:
        return model, []
    keep = np.setdiff1d(np.arange(y.size), removed)
    y_keep = y[keep]
    if not ((y_keep == 0).any() and (y_keep == 1).any()):
        warnings.warn(
            "noise cleaning aborted: removal would empty a class", stacklevel=2
        )
        return model, []
    kept_records = [records[i] for i in keep]
    return trainer(kept_records, y_keep), [int(i) for i in removed]


@dataclass
class MonthlyEnsemble:
    """Twelve month-of-year models with a combining rule."""

    models: dict[int, object]
    combine: str = "route"

    def __post_init__(self) -> None:
        if sorted(self.models) != list(range(1, 13)):
            raise ModelError("monthly ensemble requires models for months 1..12")
        if self.combine not in ("route", "average"):
            raise ModelError("combine must be 'route' or 'average'")

    def score(self, records: Sequence, months: Sequence[int]) -> np.ndarray:
        months = np.asarray(months, dtype=int)
        if self.combine == "average":
            scores = np.stack([
                np.asarray(self.models[m].score(records)) for m in range(1, 13)
            ])
            return scores.mean(axis=0)
        out = np.empty(len(records), dtype=float)
        for m in range(1, 13):
            sel = np.flatnonzero(months == m)
            if sel.size:
                sub = [records[i] for i in sel]
                out[sel] = np.asarray(self.models[m].score(sub))
        return out


def monthly_ensemble(
    records: Sequence,
    labels: Sequence[int],
    months: Sequence[int],
    trainer: Callable,
    combine: str = "route",
) -> MonthlyEnsemble:
    """Train one model per calendar month across all years."""
    y = np.asarray(labels, dtype=int)
    months = np.asarray(months, dtype=int)
    models: dict[int, object] = {}
    for m in range(1, 13):
        sel = np.flatnonzero(months == m)
        y_m = y[sel]
        if sel.size == 0 or not ((y_m == 0).any() and (y_m == 1).any()):
            raise ModelError(f"month {m} lacks a class; cannot train its model")
        models[m] = trainer([records[i] for i in sel], y_m)
    return MonthlyEnsemble(models=models, combine=combine)


@dataclass
class SelectionStep:
    added: str
    mean_auc: float
    improvement: float
    candidate_aucs: dict[str, float]


def forward_select(
    candidates: Sequence[str],
    evaluate_subset: Callable[[tuple[str, ...]], float],
    epsilon: float = 0.0,
    iv_by_name: dict[str, float] | None = None,
) -> tuple[list[str], list[SelectionStep]]:
    """Greedy forward selection on mean cross-validated AUC.

    ``evaluate_subset`` maps a tuple of candidate names to a mean CV AUC;
    the caller fixes folds and seed so evaluations are comparable. Adding
    stops when the best improvement does not exceed ``epsilon``. Ties are
    broken by higher standalone IV, then by name.
    """
    iv_by_name = iv_by_name or {}
    selected: list[str] = []
    trace: list[SelectionStep] = []
    best_auc = 0.5  # intercept-only model has no discrimination
    remaining = list(candidates)
    while remaining:
        scored: list[tuple[float, float, str]] = []
        aucs: dict[str, float] = {}
        for cand in remaining:
            auc = evaluate_subset(tuple(selected) + (cand,))
            aucs[cand] = auc
            scored.append((-auc, -iv_by_name.get(cand, 0.0), cand))
        scored.sort()
        top_auc = -scored[0][0]
        winner = scored[0][2]
        improvement = top_auc - best_auc
        if improvement <= epsilon:
            break
        selected.append(winner)
        remaining.remove(winner)
        trace.append(SelectionStep(winner, top_auc, improvement, aucs))
        best_auc = top_auc
    return selected, trace


# -- export / import --------------------------------------------------------

def _meta_lines(meta: dict[str, str]) -> list[str]:
    out = []
    for k, v in sorted(meta.items()):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(["meta", k, v])
        out.append(buf.getvalue())
    return out


def _write_logistic(buf: io.StringIO, model: LogisticModel) -> None:
    buf.write(f"intercept={float_repr(model.intercept)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for name, weight in zip(model.feature_names, model.weights):
        writer.writerow(["weight", name, float_repr(float(weight))])
    writer.writerow(["fit", "iterations", model.iterations])
    writer.writerow(["fit", "gradient_norm", float_repr(model.gradient_norm)])


def _write_stumps(buf: io.StringIO, model: StumpEnsemble) -> None:
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["features", *model.feature_names])
    for stump, alpha, err in model.rounds:
        writer.writerow([
            "round", stump.feature, float_repr(stump.threshold), stump.polarity,
            float_repr(alpha), float_repr(err),
        ])


def model_to_text(model, characteristics_file: str = "",
                  meta: dict[str, str] | None = None) -> str:
    """Serialize a model (or monthly bundle) with full float precision."""
    buf = io.StringIO()
    if isinstance(model, MonthlyEnsemble):
        buf.write("model_type=monthly_ensemble\n")
        buf.write(f"characteristics_file={characteristics_file}\n")
        buf.write(f"combine={model.combine}\n")
        for line in _meta_lines(meta or {}):
            buf.write(line + "\n")
        for m in range(1, 13):
            buf.write(f"[month={m}]\n")
            sub = model.models[m]
            inner = getattr(sub, "model", sub)
            if isinstance(inner, LogisticModel):
                buf.write("model_type=logistic\n")
                _write_logistic(buf, inner)
            elif isinstance(inner, StumpEnsemble):
                buf.write("model_type=adaboost\n")
                _write_stumps(buf, inner)
            else:
                raise ModelError(f"cannot serialize {type(inner).__name__}")
        return buf.getvalue()
    if isinstance(model, LogisticModel):
        buf.write("model_type=logistic\n")
        buf.write(f"characteristics_file={characteristics_file}\n")
        for line in _meta_lines(meta or {}):
            buf.write(line + "\n")
        _write_logistic(buf, model)
        return buf.getvalue()
    if isinstance(model, StumpEnsemble):
        buf.write("model_type=adaboost\n")
        buf.write(f"characteristics_file={characteristics_file}\n")
        for line in _meta_lines(meta or {}):
            buf.write(line + "\n")
        _write_stumps(buf, model)
        return buf.getvalue()
    raise ModelError(f"cannot serialize {type(model).__name__}")


def _parse_single(lines: list[str], model_type: str):
    intercept = 0.0
    weights: list[float] = []
    names: list[str] = []
    iterations = 0
    grad_norm = math.nan
    stump_rows: list[tuple[Stump, float, float]] = []
    stump_features: tuple[str, ...] = ()
    for line in lines:
        if line.startswith("intercept="):
            intercept = float(line.split("=", 1)[1])
            continue
        row = next(csv.reader([line]))
        if row[0] == "weight":
            names.append(row[1])
            weights.append(float(row[2]))
        elif row[0] == "fit":
            if row[1] == "iterations":
                iterations = int(row[2])
            elif row[1] == "gradient_norm":
                grad_norm = float(row[2])
        elif row[0] == "features":
            stump_features = tuple(row[1:])
        elif row[0] == "round":
            stump_rows.append((
                Stump(int(row[1]), float(row[2]), int(row[3])),
                float(row[4]), float(row[5]),
            ))
    if model_type == "logistic":
        return LogisticModel(
            intercept=intercept,
            weights=np.array(weights),
            feature_names=tuple(names),
            iterations=iterations,
            gradient_norm=grad_norm,
        )
    if model_type == "adaboost":
        return StumpEnsemble(rounds=stump_rows, feature_names=stump_features)
    raise ModelError(f"unknown model_type {model_type!r}")


def model_from_text(text: str) -> tuple[object, str, dict[str, str]]:
    """Inverse of :func:`model_to_text`; returns (model, chars file, meta)."""
    lines = [ln for ln in text.splitlines() if ln.strip() != ""]
    if not lines or not lines[0].startswith("model_type="):
        raise ModelError("not a model file")
    model_type = lines[0].split("=", 1)[1]
    chars_file = ""
    meta: dict[str, str] = {}
    body_start = 1
    combine = "route"
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("characteristics_file="):
            chars_file = line.split("=", 1)[1]
        elif line.startswith("combine="):
            combine = line.split("=", 1)[1]
        elif line.startswith("meta,"):
            _, k, v = next(csv.reader([line]))
            meta[k] = v
        else:
            body_start = i
            break
    else:
        body_start = len(lines)
    body = lines[body_start:]
    if model_type != "monthly_ensemble":
        return _parse_single(body, model_type), chars_file, meta
    months: dict[int, object] = {}
    current: list[str] = []
    current_month = 0
    sub_type = ""
    for line in body + ["[month=0]"]:
        if line.startswith("[month="):
            if current_month:
                months[current_month] = _parse_single(current, sub_type)
            current_month = int(line[len("[month="):-1])
            current = []
            sub_type = ""
        elif line.startswith("model_type="):
            sub_type = line.split("=", 1)[1]
        else:
            current.append(line)
    return MonthlyEnsemble(models=months, combine=combine), chars_file, meta


def write_model(path: str | Path, model, characteristics_file: str = "",
                meta: dict[str, str] | None = None) -> None:
    write_text_atomic(path, model_to_text(model, characteristics_file, meta))


def read_model(path: str | Path) -> tuple[object, str, dict[str, str]]:
    return model_from_text(Path(path).read_text(encoding="utf-8"))
