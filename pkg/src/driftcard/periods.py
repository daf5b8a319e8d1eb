"""Month and quarter indexing used to align datasets and series.

Months and quarters are handled as flat integer indices (``year*12 + month-1``
and ``year*4 + quarter-1``) so that adjacency, gaps and windows reduce to
integer arithmetic. Text labels follow ``YYYY-MM`` and ``YYYY-Qn``.
"""

from __future__ import annotations

import datetime as dt
import re

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_QUARTER_RE = re.compile(r"^(\d{4})-Q([1-4])$")


def month_index(year: int, month: int) -> int:
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    return year * 12 + (month - 1)


def month_of_date(date: dt.date) -> int:
    return month_index(date.year, date.month)


def parse_month(text: str) -> int:
    m = _MONTH_RE.match(text.strip())
    if not m:
        raise ValueError(f"expected YYYY-MM, got {text!r}")
    return month_index(int(m.group(1)), int(m.group(2)))


def month_label(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def month_of_year(index: int) -> int:
    """Calendar month 1..12 of a flat month index."""
    return index % 12 + 1


def year_of_month(index: int) -> int:
    return index // 12


def quarter_index(year: int, quarter: int) -> int:
    if not 1 <= quarter <= 4:
        raise ValueError(f"quarter out of range: {quarter}")
    return year * 4 + (quarter - 1)


def parse_quarter(text: str) -> int:
    m = _QUARTER_RE.match(text.strip())
    if not m:
        raise ValueError(f"expected YYYY-Qn, got {text!r}")
    return quarter_index(int(m.group(1)), int(m.group(2)))


def quarter_label(index: int) -> str:
    return f"{index // 4:04d}-Q{index % 4 + 1}"


def quarter_of_month(month_idx: int) -> int:
    """Quarter index containing the given month index."""
    return (month_idx // 12) * 4 + (month_idx % 12) // 3


def months_of_quarter(quarter_idx: int) -> tuple[int, int, int]:
    first = (quarter_idx // 4) * 12 + (quarter_idx % 4) * 3
    return (first, first + 1, first + 2)


def parse_period(text: str) -> tuple[str, int]:
    """Parse either period format; returns ("month"|"quarter", index)."""
    s = text.strip()
    if _MONTH_RE.match(s):
        return "month", parse_month(s)
    if _QUARTER_RE.match(s):
        return "quarter", parse_quarter(s)
    raise ValueError(f"unrecognised period {text!r} (want YYYY-MM or YYYY-Qn)")
