"""Supervised binning, weight-of-evidence encoding and information value.

WoE of a bin with ``g`` goods and ``b`` bads out of population totals
``G`` and ``B``:

    WoE = ln((g/G) / (b/B))

so a larger WoE means a higher proportion of good customers. A bin where
either class is empty has no defined WoE and receives the characteristic's
count-weighted average WoE as a fallback; the same fallback serves tokens
and values never seen while fitting. The predictive strength of a binned
characteristic is its information value:

    IV = sum over bins of (g/G - b/B) * WoE

summed over bins with a defined WoE only.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import float_repr, write_text_atomic

INTERVAL = "interval"
CLASS_SET = "class"
MISSING = "missing"
CELL = "cell"
CATCH_ALL = "other"

#: Fallback routing for values a characteristic was never fitted on.
#: "average" assigns the average partial score; "missing_bin" mimics a
#: naive pipeline that treats unknown values as missing.
UNFAMILIAR_MODES = ("average", "missing_bin")


class BinningError(ValueError):
    pass


@dataclass(frozen=True)
class Bin:
    """One attribute of a characteristic.

    ``key`` depends on ``kind``: an (lo, hi) pair for intervals, a frozenset
    of tokens for class sets, None for the missing bucket, and a tuple of
    parent bin indices (or CATCH_ALL) for interaction cells.
    """

    kind: str
    key: object
    good: int
    bad: int
    woe: float
    fallback: bool = False

    @property
    def count(self) -> int:
        return self.good + self.bad


@dataclass(frozen=True)
class BinningConfig:
    """Controls for the numeric binning algorithm.

    Adjacent intervals keep merging while the smallest pairwise chi-square
    stays below ``merge_significance`` (default: the 95% critical value at
    one degree of freedom), and for as long as any interval holds less
    than ``min_bin_fraction`` of the sample or, with ``monotonic_woe`` on,
    the WoE sequence is not monotone.
    """

    max_pre_bins: int = 20
    min_bin_fraction: float = 0.02
    monotonic_woe: bool = True
    merge_significance: float = 3.8414588206941245

    def __post_init__(self) -> None:
        if self.max_pre_bins < 2:
            raise ValueError("max_pre_bins must be >= 2")
        if not 0.0 < self.min_bin_fraction < 1.0:
            raise ValueError("min_bin_fraction must be in (0, 1)")
        if self.merge_significance < 0.0:
            raise ValueError("merge_significance must be >= 0")


def compute_woe(g: int, b: int, G: int, B: int, fallback: float) -> float:
    """WoE of one bin; returns ``fallback`` when either class is empty."""
    if G <= 0 or B <= 0:
        raise BinningError("degenerate sample: a class total is zero")
    if g < 0 or b < 0:
        raise BinningError("negative bin count")
    if g == 0 or b == 0:
        return fallback
    return math.log((g / G) / (b / B))


@dataclass
class Characteristic:
    """A fitted, encodable variable: bins plus WoE/IV bookkeeping.

    ``kind`` is "numeric", "nominal" or "interaction"; interactions carry
    their parent characteristics and map tuples of parent bin indices to
    cross-product cells.
    """

    name: str
    kind: str
    sources: tuple[str, ...]
    bins: list[Bin]
    iv: float
    average_woe: float
    parents: tuple["Characteristic", ...] = ()
    _token_map: dict | None = field(default=None, repr=False, compare=False)
    _cell_map: dict | None = field(default=None, repr=False, compare=False)

    # -- lookup ---------------------------------------------------------

    def _interval_bins(self) -> list[tuple[int, float, float]]:
        return [
            (i, b.key[0], b.key[1]) for i, b in enumerate(self.bins)
            if b.kind == INTERVAL
        ]

    def missing_index(self) -> int | None:
        for i, b in enumerate(self.bins):
            if b.kind == MISSING:
                return i
        return None

    def _tokens(self) -> dict[str, int]:
        if self._token_map is None:
            mapping: dict[str, int] = {}
            for i, b in enumerate(self.bins):
                if b.kind == CLASS_SET:
                    for tok in b.key:
                        mapping[tok] = i
            self._token_map = mapping
        return self._token_map

    def _cells(self) -> dict:
        if self._cell_map is None:
            mapping = {}
            for i, b in enumerate(self.bins):
                if b.kind == CELL:
                    mapping[b.key] = i
            self._cell_map = mapping
        return self._cell_map

    def locate(self, value) -> int | None:
        """Bin index for a raw value; None means "not fitted for this".

        Numeric values on a bin's lower bound belong to that bin (intervals
        are [lo, hi), the top interval closed at the observed maximum);
        values outside the fitted range, unfamiliar tokens and missing
        values without a bucket all return None.
        """
        if self.kind == "numeric":
            if value is None or (isinstance(value, float) and math.isnan(value)):
                return self.missing_index()
            intervals = self._interval_bins()
            if not intervals:
                return None
            v = float(value)
            for i, lo, hi in intervals[:-1]:
                if lo <= v < hi:
                    return i
            last, lo, hi = intervals[-1]
            if lo <= v <= hi:
                return last
            return None
        if self.kind == "nominal":
            if value is None:
                return self.missing_index()
            return self._tokens().get(str(value))
        if self.kind == "interaction":
            idx = []
            for parent, v in zip(self.parents, value):
                j = parent.locate(v)
                if j is None:
                    return None
                idx.append(j)
            cells = self._cells()
            found = cells.get(tuple(idx))
            if found is not None:
                return found
            return cells.get(CATCH_ALL)
        raise BinningError(f"unknown characteristic kind {self.kind!r}")

    def woe_for(self, value, unfamiliar: str = "average") -> float:
        """WoE contribution of a raw value; total for every input."""
        if unfamiliar not in UNFAMILIAR_MODES:
            raise BinningError(f"unknown unfamiliar mode {unfamiliar!r}")
        idx = self.locate(value)
        if idx is not None:
            return self.bins[idx].woe
        if unfamiliar == "missing_bin":
            mi = self.missing_index()
            return self.bins[mi].woe if mi is not None else 0.0
        return self.average_woe

    def locate_array(self, values: Sequence) -> np.ndarray:
        """Vectorized :meth:`locate`; -1 marks values not fitted."""
        n = len(values)
        out = np.full(n, -1, dtype=np.int64)
        if self.kind == "numeric":
            arr = np.array(
                [np.nan if v is None else float(v) for v in values], dtype=float
            )
            intervals = self._interval_bins()
            if intervals:
                pos_of = np.array([i for i, _, _ in intervals])
                lows = np.array([lo for _, lo, _ in intervals])
                his = np.array([hi for _, _, hi in intervals])
                cand = np.searchsorted(lows, arr, side="right") - 1
                cand_c = np.clip(cand, 0, len(intervals) - 1)
                inside = (cand >= 0) & ~np.isnan(arr)
                upper = np.where(cand_c == len(intervals) - 1,
                                 arr <= his[cand_c], arr < his[cand_c])
                ok = inside & upper
                out[ok] = pos_of[cand_c[ok]]
            mi = self.missing_index()
            if mi is not None:
                out[np.isnan(arr)] = mi
            return out
        if self.kind == "nominal":
            tokens = self._tokens()
            mi = self.missing_index()
            miss = -1 if mi is None else mi
            for i, v in enumerate(values):
                out[i] = miss if v is None else tokens.get(str(v), -1)
            return out
        if self.kind == "interaction":
            columns = list(zip(*values)) if n else [()] * len(self.parents)
            parent_idx = [
                p.locate_array(list(col)) for p, col in zip(self.parents, columns)
            ]
            cells = self._cells()
            other = cells.get(CATCH_ALL, -1)
            for i in range(n):
                key = tuple(int(col[i]) for col in parent_idx)
                if any(j < 0 for j in key):
                    out[i] = -1
                else:
                    found = cells.get(key)
                    out[i] = other if found is None else found
            return out
        raise BinningError(f"unknown characteristic kind {self.kind!r}")

    def woe_array(self, values: Sequence, unfamiliar: str = "average") -> np.ndarray:
        """Vectorized :meth:`woe_for` over raw values."""
        if unfamiliar not in UNFAMILIAR_MODES:
            raise BinningError(f"unknown unfamiliar mode {unfamiliar!r}")
        idx = self.locate_array(values)
        woes = np.array([b.woe for b in self.bins])
        if unfamiliar == "missing_bin":
            mi = self.missing_index()
            fallback = woes[mi] if mi is not None else 0.0
        else:
            fallback = self.average_woe
        out = np.where(idx >= 0, woes[np.clip(idx, 0, len(woes) - 1)], fallback)
        return out

    def totals(self) -> tuple[int, int]:
        return sum(b.good for b in self.bins), sum(b.bad for b in self.bins)


def compute_iv(characteristic: Characteristic) -> float:
    """Information value over the bins with a defined (non-fallback) WoE."""
    G, B = characteristic.totals()
    if G <= 0 or B <= 0:
        raise BinningError("degenerate sample: a class total is zero")
    iv = 0.0
    for b in characteristic.bins:
        if b.fallback:
            continue
        iv += (b.good / G - b.bad / B) * b.woe
    return iv


def _finalize(
    name: str,
    kind: str,
    sources: tuple[str, ...],
    raw_bins: list[tuple[str, object, int, int]],
    parents: tuple[Characteristic, ...] = (),
) -> Characteristic:
    """Attach WoEs, fallback values, average WoE and IV to counted bins."""
    G = sum(g for _, _, g, _ in raw_bins)
    B = sum(b for _, _, _, b in raw_bins)
    if G <= 0 or B <= 0:
        raise BinningError(f"{name}: sample lacks one of the classes")
    defined: list[tuple[int, float, int]] = []
    for i, (_, _, g, b) in enumerate(raw_bins):
        if g > 0 and b > 0:
            defined.append((i, math.log((g / G) / (b / B)), g + b))
    total_defined = sum(n for _, _, n in defined)
    if total_defined:
        average = sum(w * n for _, w, n in defined) / total_defined
    else:
        average = 0.0
    woe_by_index = {i: w for i, w, _ in defined}
    bins = [
        Bin(kind_, key, g, b,
            woe_by_index.get(i, average), fallback=i not in woe_by_index)
        for i, (kind_, key, g, b) in enumerate(raw_bins)
    ]
    ch = Characteristic(name, kind, sources, bins, 0.0, average, parents)
    ch.iv = compute_iv(ch)
    return ch


# -- numeric binning ------------------------------------------------------

def _pair_chi2(g1: int, b1: int, g2: int, b2: int) -> float:
    """Chi-square of a 2x2 adjacent-bin contingency table (0 if degenerate)."""
    n = g1 + b1 + g2 + b2
    r1, r2, c1, c2 = g1 + b1, g2 + b2, g1 + g2, b1 + b2
    if r1 == 0 or r2 == 0 or c1 == 0 or c2 == 0:
        return 0.0
    det = g1 * b2 - g2 * b1
    return n * det * det / (r1 * r2 * c1 * c2)


def _smoothed_woes(counts: list[tuple[int, int]], G: int, B: int) -> list[float]:
    # Laplace smoothing keeps the monotonicity check defined for empty-class
    # bins during merging; final WoEs use the unsmoothed formula.
    return [
        math.log(((g + 0.5) / G) / ((b + 0.5) / B)) for g, b in counts
    ]


def _is_monotone(values: Sequence[float]) -> bool:
    inc = all(a <= b for a, b in zip(values, values[1:]))
    dec = all(a >= b for a, b in zip(values, values[1:]))
    return inc or dec


def supervised_bin(
    values: Sequence[float | None],
    labels: Sequence[int],
    config: BinningConfig = BinningConfig(),
    name: str = "",
    source: str = "",
) -> Characteristic:
    """Bin a numeric variable against a binary target.

    Quantile pre-binning into at most ``max_pre_bins`` intervals, then the
    adjacent pair with the smallest chi-square statistic is merged until
    every interval holds at least ``min_bin_fraction`` of the sample and,
    when enabled, WoE is monotone across the intervals. Missing values get
    their own bucket. Deterministic: refitting the same sample reproduces
    identical bins.
    """
    values = list(values)
    y = np.asarray(labels, dtype=int)
    if len(values) != len(y):
        raise BinningError("values and labels differ in length")
    if y.min(initial=1) < 0 or y.max(initial=0) > 1:
        raise BinningError("labels must be 0/1")
    present = np.array(
        [v is not None and not (isinstance(v, float) and math.isnan(v)) for v in values]
    )
    if not (y == 0).any() or not (y == 1).any():
        raise BinningError("both classes must be present")
    x = np.array([float(values[i]) for i in np.flatnonzero(present)])
    yx = y[present]
    n_total = len(values)
    miss_g = int(((~present) & (y == 0)).sum())
    miss_b = int(((~present) & (y == 1)).sum())

    source = source or name
    if x.size == 0:
        raise BinningError(f"{name or source}: no non-missing values")

    distinct = np.unique(x)
    if distinct.size < 2:
        raw: list[tuple[str, object, int, int]] = [
            (INTERVAL, (float(distinct[0]), float(distinct[0])),
             int((yx == 0).sum()), int((yx == 1).sum()))
        ]
        if miss_g + miss_b:
            raw.append((MISSING, None, miss_g, miss_b))
        return _finalize(name or source, "numeric", (source,), raw)

    lo_all, hi_all = float(x.min()), float(x.max())
    qs = np.linspace(0.0, 1.0, config.max_pre_bins + 1)[1:-1]
    cuts = np.unique(np.quantile(x, qs, method="higher"))
    cuts = cuts[(cuts > lo_all) & (cuts <= hi_all)]
    edges = [lo_all, *map(float, cuts), hi_all]

    # Count goods/bads per pre-bin: bin i covers [edges[i], edges[i+1]).
    idx = np.searchsorted(np.array(edges[1:-1]), x, side="right")
    k = len(edges) - 1
    counts = [
        (int(((idx == i) & (yx == 0)).sum()), int(((idx == i) & (yx == 1)).sum()))
        for i in range(k)
    ]
    bounds = [(edges[i], edges[i + 1]) for i in range(k)]

    G = int((yx == 0).sum()) + miss_g
    B = int((yx == 1).sum()) + miss_b
    min_count = config.min_bin_fraction * n_total

    def should_merge(chis: list[float]) -> bool:
        if len(counts) <= 1:
            return False
        if any(g + b < min_count for g, b in counts):
            return True
        if config.monotonic_woe and not _is_monotone(_smoothed_woes(counts, G, B)):
            return True
        # ChiMerge stop: adjacent pairs indistinguishable at the configured
        # significance level keep merging, but never below two intervals.
        return len(counts) > 2 and min(chis) < config.merge_significance

    while True:
        chis = [
            _pair_chi2(*counts[i], *counts[i + 1]) for i in range(len(counts) - 1)
        ]
        if not should_merge(chis):
            break
        j = int(np.argmin(chis))
        counts[j] = (counts[j][0] + counts[j + 1][0], counts[j][1] + counts[j + 1][1])
        bounds[j] = (bounds[j][0], bounds[j + 1][1])
        del counts[j + 1], bounds[j + 1]

    raw = [
        (INTERVAL, (float(lo), float(hi)), g, b)
        for (lo, hi), (g, b) in zip(bounds, counts)
    ]
    if miss_g + miss_b:
        raw.append((MISSING, None, miss_g, miss_b))
    return _finalize(name or source, "numeric", (source,), raw)


def bin_nominal(
    tokens: Sequence[str | None],
    labels: Sequence[int],
    name: str = "",
    source: str = "",
) -> Characteristic:
    """One bin per class token plus a missing bucket when needed."""
    y = np.asarray(labels, dtype=int)
    if len(tokens) != len(y):
        raise BinningError("tokens and labels differ in length")
    if not (y == 0).any() or not (y == 1).any():
        raise BinningError("both classes must be present")
    source = source or name
    by_token: dict[str, list[int]] = {}
    miss = [0, 0]
    for tok, lab in zip(tokens, y):
        if tok is None:
            miss[lab] += 1
        else:
            cell = by_token.setdefault(str(tok), [0, 0])
            cell[lab] += 1
    raw: list[tuple[str, object, int, int]] = [
        (CLASS_SET, frozenset([tok]), gb[0], gb[1])
        for tok, gb in sorted(by_token.items())
    ]
    if miss[0] + miss[1]:
        raw.append((MISSING, None, miss[0], miss[1]))
    if not raw:
        raise BinningError(f"{name or source}: no values at all")
    return _finalize(name or source, "nominal", (source,), raw)


def build_interaction(
    name: str,
    parents: Sequence[Characteristic],
    parent_values: Sequence[Sequence],
    labels: Sequence[int],
    min_bin_fraction: float = 0.02,
) -> Characteristic:
    """Cross the bins of two or three fitted characteristics.

    Each record lands in the cell given by its parents' bin indices;
    cells holding less than ``min_bin_fraction`` of the sample (and any
    record a parent cannot place) are merged into one catch-all cell, so
    the cell counts always cover the whole fitting sample.
    """
    if not 2 <= len(parents) <= 3:
        raise BinningError("interaction takes 2 or 3 parents")
    if len(parent_values) != len(parents):
        raise BinningError("one value sequence per parent required")
    y = np.asarray(labels, dtype=int)
    n = len(y)
    if any(len(vs) != n for vs in parent_values):
        raise BinningError("value sequences and labels differ in length")

    cells: dict[object, list[int]] = {}
    for i in range(n):
        key: object = tuple(
            parent.locate(vs[i]) for parent, vs in zip(parents, parent_values)
        )
        if any(j is None for j in key):
            key = CATCH_ALL
        cell = cells.setdefault(key, [0, 0])
        cell[y[i]] += 1

    min_count = min_bin_fraction * n
    merged = cells.pop(CATCH_ALL, [0, 0])
    kept: dict[tuple, list[int]] = {}
    for key, gb in cells.items():
        if gb[0] + gb[1] < min_count:
            merged[0] += gb[0]
            merged[1] += gb[1]
        else:
            kept[key] = gb
    raw: list[tuple[str, object, int, int]] = [
        (CELL, key, gb[0], gb[1]) for key, gb in sorted(kept.items())
    ]
    if merged[0] + merged[1]:
        raw.append((CELL, CATCH_ALL, merged[0], merged[1]))
    if len(raw) < 2:
        raise BinningError(f"{name}: cross product left fewer than 2 cells")
    sources = tuple(s for p in parents for s in p.sources)
    return _finalize(name, "interaction", sources, raw, parents=tuple(parents))


def encode(record_values: Sequence, characteristics: Sequence[Characteristic],
           unfamiliar: str = "average") -> np.ndarray:
    """WoE vector of one record: one real per characteristic.

    ``record_values`` holds, per characteristic, the raw value (or tuple of
    parent raw values for an interaction). Total and deterministic.
    """
    return np.array(
        [ch.woe_for(v, unfamiliar) for v, ch in zip(record_values, characteristics)]
    )


# -- export / import ------------------------------------------------------

def _key_to_json(b: Bin) -> object:
    if b.kind == INTERVAL:
        return [b.key[0], b.key[1]]
    if b.kind == CLASS_SET:
        return sorted(b.key)
    if b.kind == MISSING:
        return None
    if b.kind == CELL:
        return CATCH_ALL if b.key == CATCH_ALL else list(b.key)
    raise BinningError(f"unknown bin kind {b.kind!r}")


def _key_from_json(kind: str, payload: object) -> object:
    if kind == INTERVAL:
        return (float(payload[0]), float(payload[1]))
    if kind == CLASS_SET:
        return frozenset(payload)
    if kind == MISSING:
        return None
    if kind == CELL:
        return CATCH_ALL if payload == CATCH_ALL else tuple(int(i) for i in payload)
    raise BinningError(f"unknown bin kind {kind!r}")


def characteristics_to_text(characteristics: Sequence[Characteristic]) -> str:
    """Serialize characteristics to an auditable text block.

    One header per characteristic (name, kind, sources, iv, average_woe,
    parents) followed by one CSV bin line each: kind, key, g, b, woe,
    fallback. Floats use exact round-trip decimals. Parents of an
    interaction must be serialized in the same file, earlier.
    """
    buf = io.StringIO()
    names = set()
    for ch in characteristics:
        for parent in ch.parents:
            if parent.name not in names:
                raise BinningError(
                    f"{ch.name}: parent {parent.name} must be exported first"
                )
        names.add(ch.name)
        buf.write(f"characteristic={ch.name}\n")
        buf.write(f"kind={ch.kind}\n")
        buf.write(f"sources={json.dumps(list(ch.sources))}\n")
        buf.write(f"parents={json.dumps([p.name for p in ch.parents])}\n")
        buf.write(f"iv={float_repr(ch.iv)}\n")
        buf.write(f"average_woe={float_repr(ch.average_woe)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        for b in ch.bins:
            writer.writerow([
                b.kind, json.dumps(_key_to_json(b)), b.good, b.bad,
                float_repr(b.woe), int(b.fallback),
            ])
        buf.write("\n")
    return buf.getvalue()


def characteristics_from_text(text: str) -> list[Characteristic]:
    by_name: dict[str, Characteristic] = {}
    out: list[Characteristic] = []
    block: list[str] = []

    def flush(lines: list[str]) -> None:
        header: dict[str, str] = {}
        bin_lines: list[str] = []
        for ln in lines:
            if "=" in ln and not bin_lines and ln.split("=", 1)[0] in (
                "characteristic", "kind", "sources", "parents", "iv", "average_woe",
            ):
                k, v = ln.split("=", 1)
                header[k] = v
            else:
                bin_lines.append(ln)
        name = header["characteristic"]
        parents = tuple(by_name[p] for p in json.loads(header["parents"]))
        bins = []
        for row in csv.reader(bin_lines):
            kind, key_json, g, b, woe, fb = row
            bins.append(Bin(kind, _key_from_json(kind, json.loads(key_json)),
                            int(g), int(b), float(woe), bool(int(fb))))
        ch = Characteristic(
            name=name,
            kind=header["kind"],
            sources=tuple(json.loads(header["sources"])),
            bins=bins,
            iv=float(header["iv"]),
            average_woe=float(header["average_woe"]),
            parents=parents,
        )
        by_name[name] = ch
        out.append(ch)

    for line in text.splitlines():
        if line.strip() == "":
            if block:
                flush(block)
                block = []
        else:
            block.append(line)
    if block:
        flush(block)
    return out


def write_characteristics(path: str | Path, chars: Sequence[Characteristic]) -> None:
    write_text_atomic(path, characteristics_to_text(chars))


def read_characteristics(path: str | Path) -> list[Characteristic]:
    return characteristics_from_text(Path(path).read_text(encoding="utf-8"))
