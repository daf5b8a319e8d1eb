"""Application ingestion, validation, cleansing and temporal windowing.

Raw data arrives as delimited text with a header row; every row either
becomes an :class:`Application` or produces a line-numbered diagnostic,
never a silent drop. Cleansing is total: anomalies are flagged as missing
and counted in a :class:`CleansingReport`, records are never rejected.
"""

from __future__ import annotations

import datetime as dt
import io
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .periods import month_of_date, month_of_year

OTHER_CLASS = "other"
GEOGRAPHY_NAME = "geography"
GEOGRAPHY_SEPARATOR = "|"

_WS_RE = re.compile(r"\s+")


class DatasetError(ValueError):
    """Fatal ingestion problem (malformed header, unknown schema column)."""


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout of a delimited application file."""

    numeric: tuple[str, ...]
    nominal: tuple[str, ...]
    binary: tuple[str, ...]
    id_column: str = "id"
    date_column: str = "application_date"
    label_column: str = "label"

    def columns(self) -> tuple[str, ...]:
        return (
            (self.id_column, self.date_column)
            + self.numeric
            + self.nominal
            + self.binary
            + (self.label_column,)
        )


#: Schema of the bundled synthetic generator; real files may declare their own.
DEFAULT_SCHEMA = DatasetSchema(
    numeric=(
        "age",
        "monthly_income",
        "time_at_address",
        "time_at_employer",
        "n_dependents",
        "n_accounts",
    ),
    nominal=(
        "due_day",
        "state",
        "city",
        "neighborhood",
        "marital_status",
        "occupation_code",
        "income_proof_type",
        "home_type",
        "dialing_code",
    ),
    binary=("has_phone", "previous_credit", "works_in_same_state"),
)


@dataclass
class Application:
    """One credit application; attribute maps carry ``None`` for missing."""

    id: str
    application_date: dt.date
    numeric_attrs: dict[str, float | None]
    nominal_attrs: dict[str, str | None]
    binary_attrs: dict[str, int | None]
    label: int | None = None

    @property
    def month(self) -> int:
        """Flat month index of the application date."""
        return month_of_date(self.application_date)


@dataclass(frozen=True)
class CleansingPolicy:
    age_valid_range: tuple[float, float] = (18.0, 99.0)
    income_valid_range: tuple[float, float] = (0.0, 1e7)
    due_day_valid_range: tuple[int, int] = (1, 31)
    rare_class_threshold: int = 100
    text_normalization: bool = True

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("age_valid_range", self.age_valid_range),
            ("income_valid_range", self.income_valid_range),
            ("due_day_valid_range", self.due_day_valid_range),
        ):
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo}..{hi}")
        if self.rare_class_threshold < 0:
            raise ValueError("rare_class_threshold must be >= 0")


@dataclass
class CleansingReport:
    """Per-variable counts of dispositions applied during cleansing."""

    counts: Counter = field(default_factory=Counter)

    def add(self, variable: str, disposition: str, n: int = 1) -> None:
        if n:
            self.counts[(variable, disposition)] += n

    def count(self, variable: str, disposition: str) -> int:
        return self.counts.get((variable, disposition), 0)

    def merge(self, other: "CleansingReport") -> "CleansingReport":
        merged = CleansingReport()
        merged.counts = self.counts + other.counts
        return merged

    def to_lines(self) -> list[str]:
        """`variable,disposition,count` lines, sorted for order independence."""
        return [
            f"{var},{disp},{n}"
            for (var, disp), n in sorted(self.counts.items())
        ]


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: str
    message: str


@dataclass
class ClassMaps:
    """Fitted rare-class merge decision per nominal variable.

    ``kept`` are classes that survived, ``merged`` were renamed to the
    catch-all class. Tokens in neither set were never seen while fitting
    and pass through untouched (they are handled at encode time).
    """

    kept: dict[str, frozenset[str]]
    merged: dict[str, frozenset[str]]


@dataclass
class CleanseResult:
    records: list[Application]
    report: CleansingReport
    class_maps: ClassMaps


def parse_dataset(
    source: str | io.TextIOBase,
    schema: DatasetSchema = DEFAULT_SCHEMA,
    delimiter: str = ",",
) -> tuple[list[Application], list[ParseDiagnostic]]:
    """Parse a delimited stream into Applications plus diagnostics.

    The header must carry exactly the schema's column names (any order).
    An unparseable cell yields a diagnostic and a missing value; a row
    whose id or date cannot be read yields a row-level diagnostic and no
    Application.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    header_line = source.readline()
    if not header_line:
        raise DatasetError("empty input: header row required")
    header = [h.strip() for h in header_line.rstrip("\r\n").split(delimiter)]
    expected = set(schema.columns())
    if set(header) != expected or len(header) != len(set(header)):
        missing = sorted(expected - set(header))
        extra = sorted(set(header) - expected)
        raise DatasetError(
            f"header does not match schema (missing={missing}, unexpected={extra})"
        )
    pos = {name: i for i, name in enumerate(header)}

    records: list[Application] = []
    diagnostics: list[ParseDiagnostic] = []
    n_cols = len(header)
    for lineno, raw in enumerate(source, start=2):
        raw = raw.rstrip("\r\n")
        if raw == "":
            continue
        cells = raw.split(delimiter)
        if len(cells) != n_cols:
            diagnostics.append(
                ParseDiagnostic(lineno, "", f"expected {n_cols} cells, got {len(cells)}")
            )
            continue

        def cell(name: str) -> str:
            return cells[pos[name]].strip()

        rid = cell(schema.id_column)
        if not rid:
            diagnostics.append(ParseDiagnostic(lineno, schema.id_column, "empty id"))
            continue
        try:
            date = dt.date.fromisoformat(cell(schema.date_column))
        except ValueError:
            diagnostics.append(
                ParseDiagnostic(lineno, schema.date_column, "unparseable date")
            )
            continue

        numeric: dict[str, float | None] = {}
        for name in schema.numeric:
            text = cell(name)
            if text == "":
                numeric[name] = None
                continue
            try:
                numeric[name] = float(text)
            except ValueError:
                numeric[name] = None
                diagnostics.append(ParseDiagnostic(lineno, name, "not a number"))

        nominal: dict[str, str | None] = {
            name: (cell(name) or None) for name in schema.nominal
        }

        binary: dict[str, int | None] = {}
        for name in schema.binary:
            text = cell(name)
            if text == "":
                binary[name] = None
            elif text in ("0", "1"):
                binary[name] = int(text)
            else:
                binary[name] = None
                diagnostics.append(ParseDiagnostic(lineno, name, "not 0/1"))

        label: int | None = None
        label_text = cell(schema.label_column)
        if label_text != "":
            if label_text in ("0", "1"):
                label = int(label_text)
            else:
                diagnostics.append(
                    ParseDiagnostic(lineno, schema.label_column, "label not 0/1")
                )
        records.append(Application(rid, date, numeric, nominal, binary, label))
    return records, diagnostics


def write_dataset(
    records: Sequence[Application],
    schema: DatasetSchema = DEFAULT_SCHEMA,
    delimiter: str = ",",
    extra_numeric: tuple[str, ...] = (),
    extra_nominal: tuple[str, ...] = (),
) -> str:
    """Render records back to delimited text (missing values as empty cells)."""
    numeric = schema.numeric + extra_numeric
    nominal = schema.nominal + extra_nominal
    cols = (
        (schema.id_column, schema.date_column)
        + numeric
        + nominal
        + schema.binary
        + (schema.label_column,)
    )
    out = [delimiter.join(cols)]

    def fmt_num(v: float | None) -> str:
        if v is None:
            return ""
        if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)

    for rec in records:
        row = [rec.id, rec.application_date.isoformat()]
        row += [fmt_num(rec.numeric_attrs.get(n)) for n in numeric]
        row += [rec.nominal_attrs.get(n) or "" for n in nominal]
        row += [
            "" if rec.binary_attrs.get(n) is None else str(rec.binary_attrs[n])
            for n in schema.binary
        ]
        row.append("" if rec.label is None else str(rec.label))
        out.append(delimiter.join(row))
    return "\n".join(out) + "\n"


def normalize_token(token: str) -> str:
    """Casefold, trim, collapse whitespace and strip the reserved separator."""
    token = token.replace(GEOGRAPHY_SEPARATOR, "")
    token = _WS_RE.sub(" ", token.strip())
    return token.casefold()


def _cleanse_records(
    records: Sequence[Application],
    policy: CleansingPolicy,
    class_maps: ClassMaps | None,
) -> CleanseResult:
    geo_parts = ("state", "city", "neighborhood")
    # One final disposition per (record, variable) cell, so per-variable
    # disposition counts can never exceed the record count.
    disposition: dict[tuple[int, str], str] = {}

    cleaned: list[Application] = []
    for i, rec in enumerate(records):
        numeric = dict(rec.numeric_attrs)
        nominal = dict(rec.nominal_attrs)

        for name, v in numeric.items():
            if v is None:
                disposition[(i, name)] = "missing"
        for name, rng in (("age", policy.age_valid_range),
                          ("monthly_income", policy.income_valid_range)):
            v = numeric.get(name)
            if v is not None and not rng[0] <= v <= rng[1]:
                numeric[name] = None
                disposition[(i, name)] = "out_of_range"

        for name, tok in nominal.items():
            if tok is not None and policy.text_normalization:
                norm = normalize_token(tok)
                if norm != tok:
                    disposition[(i, name)] = "normalized_text"
                tok = norm or None
                nominal[name] = tok
            if tok is None:
                disposition[(i, name)] = "missing"

        # Due day must be an integer day-of-month; anything else is flagged
        # so it picks up the average-WoE fallback downstream.
        tok = nominal.get("due_day")
        if tok is not None:
            lo, hi = policy.due_day_valid_range
            try:
                ok = lo <= int(tok) <= hi
            except ValueError:
                ok = False
            if not ok:
                nominal["due_day"] = None
                disposition[(i, "due_day")] = "out_of_range"

        cleaned.append(replace(rec, numeric_attrs=numeric, nominal_attrs=nominal))

    # Rare-class merge per nominal variable. When fitted maps are supplied
    # (scoring partitions) they are applied as-is: unseen tokens pass through
    # untouched and are handled at encode time.
    nominal_vars = sorted({k for rec in cleaned for k in rec.nominal_attrs})
    fit_mode = class_maps is None
    kept: dict[str, frozenset[str]] = {} if fit_mode else dict(class_maps.kept)
    merged: dict[str, frozenset[str]] = {} if fit_mode else dict(class_maps.merged)

    def merge_variable(name: str) -> None:
        if fit_mode:
            counts = Counter(
                rec.nominal_attrs.get(name)
                for rec in cleaned
                if rec.nominal_attrs.get(name) is not None
            )
            merged[name] = frozenset(
                tok for tok, n in counts.items() if n <= policy.rare_class_threshold
            )
            kept[name] = frozenset(counts) - merged[name]
        to_merge = merged.get(name, frozenset())
        if not to_merge:
            return
        for i, rec in enumerate(cleaned):
            tok = rec.nominal_attrs.get(name)
            if tok is not None and tok in to_merge:
                rec.nominal_attrs[name] = OTHER_CLASS
                disposition[(i, name)] = "merged_to_other"

    for name in nominal_vars:
        if name != GEOGRAPHY_NAME:
            merge_variable(name)

    # Geography: concatenate the cleansed state/city/neighborhood fields,
    # then give the combined characteristic the same rare-class treatment.
    if all(any(p in rec.nominal_attrs for rec in cleaned) for p in geo_parts):
        for i, rec in enumerate(cleaned):
            parts = [rec.nominal_attrs.get(p) for p in geo_parts]
            if all(p is not None for p in parts):
                rec.nominal_attrs[GEOGRAPHY_NAME] = GEOGRAPHY_SEPARATOR.join(parts)
                disposition.pop((i, GEOGRAPHY_NAME), None)
            else:
                rec.nominal_attrs[GEOGRAPHY_NAME] = None
                disposition[(i, GEOGRAPHY_NAME)] = "missing"
        merge_variable(GEOGRAPHY_NAME)

    report = CleansingReport()
    for (_, name), disp in disposition.items():
        report.add(name, disp)
    return CleanseResult(cleaned, report, ClassMaps(kept=kept, merged=merged))


def cleanse(records: Sequence[Application], policy: CleansingPolicy) -> CleanseResult:
    """Cleanse a modeling sample, fitting the rare-class merge on it.

    Total by design: out-of-range numerics and invalid due days become
    missing, nominal text is normalized, classes with a count at or below
    the policy threshold are renamed to the catch-all class, and the
    geography fields are concatenated into one characteristic. Everything
    anomalous is counted in the report, nothing is rejected.
    """
    return _cleanse_records(records, policy, None)


def apply_cleansing(
    records: Sequence[Application],
    policy: CleansingPolicy,
    class_maps: ClassMaps,
) -> CleanseResult:
    """Cleanse a scoring partition using merge decisions fitted elsewhere."""
    return _cleanse_records(records, policy, class_maps)


def adjust_income(
    records: Sequence[Application],
    factor_by_year: Mapping[int, float],
    source: str = "monthly_income",
    target: str = "income_adjusted",
) -> list[Application]:
    """Add an inflation-adjusted income attribute; the original is retained.

    ``factor_by_year`` holds the explicit multiplicative factor applied to
    each application year's income (supply deflators to a common basis to
    make incomes comparable across years).
    """
    years = sorted({rec.application_date.year for rec in records})
    absent = [y for y in years if y not in factor_by_year]
    if absent:
        raise ValueError(f"no inflation factor for year(s): {absent}")
    out: list[Application] = []
    for rec in records:
        numeric = dict(rec.numeric_attrs)
        income = numeric.get(source)
        factor = factor_by_year[rec.application_date.year]
        numeric[target] = None if income is None else income * factor
        out.append(replace(rec, numeric_attrs=numeric))
    return out


@dataclass(frozen=True)
class MonthRange:
    """Inclusive window of flat month indices."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError("empty month range")

    def contains(self, rec: Application) -> bool:
        return self.start <= rec.month <= self.end


@dataclass(frozen=True)
class MonthOfYear:
    """Calendar-month filter: selects that month across every year."""

    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise ValueError("month must be 1..12")

    def contains(self, rec: Application) -> bool:
        return month_of_year(rec.month) == self.month


def temporal_split(
    records: Sequence[Application], window: MonthRange | MonthOfYear
) -> tuple[list[Application], list[Application]]:
    """Partition records into (inside window, outside window)."""
    inside = [r for r in records if window.contains(r)]
    outside = [r for r in records if not window.contains(r)]
    if not inside:
        warnings.warn("temporal_split selected no records", stacklevel=2)
    return inside, outside
