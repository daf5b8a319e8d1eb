"""Report emission: fixed-column delimited metrics plus rendered figures.

Figures are written as PNG through the Agg backend with pinned metadata,
so re-running a pipeline with the same inputs reproduces identical bytes.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ._io import float_repr, write_bytes_atomic, write_text_atomic
from .calibration import DefaultSeries, apply_cutoff
from .evaluation import PsiReport
from .periods import month_label

_RC = {
    "figure.figsize": (8.0, 4.8),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
}

_PNG_METADATA = {"Software": "driftcard"}


def _value_text(value) -> str:
    if isinstance(value, float):
        return float_repr(value)
    return str(value)


def metrics_to_text(rows: Sequence[tuple[str, str, object]]) -> str:
    """Fixed three-column report: section,name,value."""
    lines = ["section,name,value"]
    lines += [f"{s},{n},{_value_text(v)}" for s, n, v in rows]
    return "\n".join(lines) + "\n"


def write_metrics(path: str | Path, rows: Sequence[tuple[str, str, object]]) -> None:
    write_text_atomic(path, metrics_to_text(rows))


def _save(fig, path: str | Path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata=_PNG_METADATA)
    plt.close(fig)
    write_bytes_atomic(path, buf.getvalue())


def plot_default_series(
    path: str | Path,
    history: DefaultSeries,
    forecast: "ForecastResult | None" = None,
    observed: DefaultSeries | None = None,
) -> None:
    """Monthly internal default with the forecast (and realized) overlay."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(history.months, history.rates, marker="o", ms=3,
                label="internal default (history)")
        if observed is not None:
            ax.plot(observed.months, observed.rates, marker="o", ms=3,
                    color="tab:gray", label="realized")
        if forecast is not None:
            ax.step(forecast.months, forecast.estimates, where="mid",
                    color="tab:red", label="forecast")
        ticks = [m for m in history.months if m % 3 == 0]
        if forecast is not None:
            ticks += [m for m in forecast.months if m % 3 == 0]
        ax.set_xticks(ticks)
        ax.set_xticklabels([month_label(m) for m in ticks], rotation=45,
                           ha="right", fontsize=7)
        ax.set_ylabel("default rate")
        ax.legend(loc="best")
        fig.tight_layout()
        _save(fig, path)


def plot_score_shift(
    path: str | Path,
    raw_scores: np.ndarray,
    adjusted_scores: np.ndarray,
    target_mean: float,
) -> None:
    """Score distributions before/after shifting plus the cutoff curve."""
    raw = np.asarray(raw_scores)
    adj = np.asarray(adjusted_scores)
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 4.2))
        bins = np.linspace(0.0, 1.0, 41)
        ax1.hist(raw, bins=bins, alpha=0.55, label="raw")
        ax1.hist(adj, bins=bins, alpha=0.55, label="adjusted")
        ax1.axvline(target_mean, color="tab:red", lw=1,
                    label=f"target mean {target_mean:.3f}")
        ax1.set_xlabel("score (P bad)")
        ax1.set_ylabel("applications")
        ax1.legend(loc="best")

        cutoffs = np.linspace(0.02, 0.98, 49)
        rates = []
        for c in cutoffs:
            try:
                _, rate = apply_cutoff(adj, float(c))
            except ValueError:
                rate = np.nan
            rates.append(rate)
        ax2.plot(cutoffs, rates, color="tab:blue")
        ax2.set_xlabel("cut-off")
        ax2.set_ylabel("adjusted default rate among approved")
        fig.tight_layout()
        _save(fig, path)


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    tp = np.concatenate([[0], np.cumsum(y == 1)])
    fp = np.concatenate([[0], np.cumsum(y == 0)])
    return fp / max(fp[-1], 1), tp / max(tp[-1], 1)


def plot_roc(
    path: str | Path,
    curves: Mapping[str, tuple[np.ndarray, np.ndarray]],
) -> None:
    """ROC curves; ``curves`` maps label -> (scores, labels)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.2, 5.0))
        for name, (scores, labels) in curves.items():
            fpr, tpr = _roc_points(np.asarray(scores), np.asarray(labels))
            ax.plot(fpr, tpr, label=name)
        ax.plot([0, 1], [0, 1], ls="--", lw=1, color="tab:gray")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def plot_iv_ranking(path: str | Path, iv_by_name: Mapping[str, float]) -> None:
    items = sorted(iv_by_name.items(), key=lambda kv: kv[1])
    names = [k for k, _ in items]
    ivs = [v for _, v in items]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7.0, 0.35 * len(names) + 1.6))
        ax.barh(range(len(names)), ivs, color="tab:blue")
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names, fontsize=8)
        ax.set_xlabel("information value")
        fig.tight_layout()
        _save(fig, path)


def plot_psi(path: str | Path, report: PsiReport) -> None:
    items = sorted(report.values.items(), key=lambda kv: kv[1])
    names = [k for k, _ in items]
    vals = [v for _, v in items]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7.0, 0.35 * len(names) + 1.6))
        ax.barh(range(len(names)), vals, color="tab:orange")
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names, fontsize=8)
        ax.axvline(0.1, color="tab:gray", lw=1, ls="--")
        ax.axvline(0.25, color="tab:red", lw=1, ls="--")
        ax.set_xlabel(
            f"PSI ({report.baseline_label} vs {report.comparison_label})"
        )
        fig.tight_layout()
        _save(fig, path)
