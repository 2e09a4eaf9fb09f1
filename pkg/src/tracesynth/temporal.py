"""Monthly completion of asset timeseries.

Mixed-granularity inputs (annual, quarterly, arbitrary spans) are resampled to
calendar months, gaps are imputed in a fixed priority order, and series are
carried forward to the end of the synthesis window.
"""

from __future__ import annotations

import calendar
import enum
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Callable, Iterable, Mapping, Sequence

from .errors import DomainError, UnestimableError
from .model import Gas, Period, compute_activity, compute_emissions, decompose_emissions

Month = tuple[int, int]


class FillFlag(str, enum.Enum):
    OBSERVED = "observed"
    ZERO_FILLED = "zero_filled"
    EQ_CONSTRAINED = "eq_constrained"
    BACKFILLED = "backfilled"
    FORWARDFILLED = "forwardfilled"
    COUNTRY_AVG = "country_avg"
    GLOBAL_AVG = "global_avg"
    PROFILE_SPLIT = "profile_split"
    SPAN_APPORTIONED = "span_apportioned"
    MONTH_EXTRAPOLATED = "month_extrapolated"

    def __str__(self) -> str:
        return self.value


def next_month(m: Month) -> Month:
    y, mo = m
    return (y + 1, 1) if mo == 12 else (y, mo + 1)


def month_range(first: Month, last: Month) -> list[Month]:
    """Inclusive list of months from ``first`` to ``last``."""
    if last < first:
        raise DomainError(f"window end {last} precedes start {first}")
    out = [first]
    while out[-1] != last:
        out.append(next_month(out[-1]))
    return out


def parse_month(text: str) -> Month:
    y, m = text.strip().split("-")[:2]
    month = (int(y), int(m))
    if not 1 <= month[1] <= 12:
        raise DomainError(f"bad month {text!r}")
    return month


def format_month(m: Month) -> str:
    return f"{m[0]:04d}-{m[1]:02d}"


def month_period(m: Month) -> Period:
    return Period.month(*m)


@dataclass
class MonthlySeries:
    """A contiguous run of months, each with a value and exactly one flag."""

    asset_id: str
    gas: Gas | None
    values: dict[Month, float] = field(default_factory=dict)
    flags: dict[Month, FillFlag] = field(default_factory=dict)
    # Per-month capacity factor implied by the stored values, when the
    # asset's capacity and emission factor are known.
    capacity_factors: dict[Month, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if set(self.values) != set(self.flags):
            raise DomainError("every month needs exactly one flag")
        months = sorted(self.values)
        if months and months != month_range(months[0], months[-1]):
            raise DomainError(f"series for {self.asset_id} is not contiguous")

    @property
    def months(self) -> list[Month]:
        return sorted(self.values)

    def as_list(self) -> list[float]:
        return [self.values[m] for m in self.months]

    def flag_list(self) -> list[FillFlag]:
        return [self.flags[m] for m in self.months]

    def total(self, year: int | None = None) -> float:
        return math.fsum(v for m, v in self.values.items() if year is None or m[0] == year)

    def is_complete(self) -> bool:
        return all(v is not None for v in self.values.values())


@dataclass(frozen=True)
class EqContext:
    """Known factors of the activity/emissions chain for one asset and gas."""

    capacity: float
    capacity_factor: float
    emission_factor: float

    def monthly_emissions(self) -> float:
        return compute_emissions(
            compute_activity(self.capacity, self.capacity_factor), self.emission_factor
        )


def impute_series(
    values: Sequence[float | None],
    *,
    start: Month = (2021, 1),
    asset_id: str = "",
    gas: Gas | None = None,
    zero_implied: Callable[[Month], bool] | None = None,
    eq_context: EqContext | None = None,
    country_avg: Sequence[float | None] | None = None,
    global_avg: Sequence[float | None] | None = None,
    observed_flags: Sequence[FillFlag | None] | None = None,
) -> MonthlySeries:
    """Fill the gaps (``None``) of a monthly series.

    Priority order: zeros where inactivity is implied, the activity/emissions
    equations when all factors are known, one global backward-fill pass then
    one forward-fill pass, then country averages and finally global averages.
    When ``eq_context`` is given, the capacity factor implied by every final
    value is stored so the equations hold month by month.

    ``observed_flags`` lets callers keep a more specific flag (for example
    ``profile_split``) on months that were present in the input.

    Raises:
        UnestimableError: a gap survives every fill step.
    """
    n = len(values)
    months = [start]
    for _ in range(n - 1):
        months.append(next_month(months[-1]))
    if n == 0:
        return MonthlySeries(asset_id, gas)

    out: list[float | None] = list(values)
    flags: list[FillFlag | None] = [
        (observed_flags[i] if observed_flags and observed_flags[i] else FillFlag.OBSERVED)
        if v is not None
        else None
        for i, v in enumerate(values)
    ]
    for i, v in enumerate(out):
        if v is not None and (math.isnan(v) or v < 0):
            raise DomainError(f"{asset_id}: invalid observed value {v} at {months[i]}")

    if zero_implied is not None:
        for i in range(n):
            if out[i] is None and zero_implied(months[i]):
                out[i], flags[i] = 0.0, FillFlag.ZERO_FILLED

    if eq_context is not None:
        eq_value = eq_context.monthly_emissions()
        for i in range(n):
            if out[i] is None:
                out[i], flags[i] = eq_value, FillFlag.EQ_CONSTRAINED

    known = [i for i in range(n) if out[i] is not None and flags[i] is not FillFlag.ZERO_FILLED]
    if known:
        nxt: float | None = None
        for i in range(n - 1, -1, -1):
            if out[i] is None:
                if nxt is not None:
                    out[i], flags[i] = nxt, FillFlag.BACKFILLED
            elif flags[i] is not FillFlag.ZERO_FILLED:
                nxt = out[i]
        last: float | None = None
        for i in range(n):
            if out[i] is None:
                if last is not None:
                    out[i], flags[i] = last, FillFlag.FORWARDFILLED
            elif flags[i] is not FillFlag.ZERO_FILLED:
                last = out[i]

    for fallback, flag in ((country_avg, FillFlag.COUNTRY_AVG), (global_avg, FillFlag.GLOBAL_AVG)):
        if fallback is None:
            continue
        for i in range(n):
            if out[i] is None and fallback[i] is not None:
                out[i], flags[i] = float(fallback[i]), flag

    gaps = [months[i] for i in range(n) if out[i] is None]
    if gaps:
        raise UnestimableError(
            f"{asset_id or 'series'}: {len(gaps)} month(s) cannot be estimated, first {gaps[0]}"
        )

    series = MonthlySeries(
        asset_id,
        gas,
        values={m: float(v) for m, v in zip(months, out)},
        flags={m: f for m, f in zip(months, flags)},
    )
    if eq_context is not None:
        series.capacity_factors = {
            m: _implied_cf(series.values[m], eq_context) for m in months
        }
    return series


def _implied_cf(value: float, ctx: EqContext) -> float:
    if ctx.capacity == 0 or ctx.emission_factor == 0:
        return ctx.capacity_factor if value == 0 else math.nan
    return decompose_emissions(value, capacity=ctx.capacity, emission_factor=ctx.emission_factor)


def _correct(parts: list[float], total: float) -> list[float]:
    """Push the floating-point residual into the largest part."""
    if not parts:
        return parts
    residual = total - math.fsum(parts)
    if residual:
        j = max(range(len(parts)), key=lambda i: (parts[i], -i))
        parts[j] = max(0.0, parts[j] + residual)
    return parts


def annual_to_monthly(annual: float, profile: Sequence[float]) -> list[float]:
    """Split an annual amount across twelve months by profile fractions."""
    if len(profile) != 12:
        raise DomainError(f"profile needs 12 weights, got {len(profile)}")
    if any(w < 0 for w in profile) or abs(math.fsum(profile) - 1.0) > 1e-9:
        raise DomainError("profile weights must be non-negative and sum to 1")
    if annual < 0:
        raise DomainError(f"annual amount {annual} is negative")
    return _correct([annual * w for w in profile], annual)


def quarterly_to_monthly(quarter: float) -> list[float]:
    if quarter < 0:
        raise DomainError(f"quarterly amount {quarter} is negative")
    third = quarter / 3.0
    return _correct([third, third, third], quarter)


def span_to_monthly(start: date, end: date, amount: float) -> dict[Month, float]:
    """Apportion ``amount`` over ``[start, end)`` by days of overlap per month."""
    if not start < end:
        raise DomainError(f"span start {start} is not before end {end}")
    if amount < 0:
        raise DomainError(f"span amount {amount} is negative")
    total_days = (end - start).days
    out: dict[Month, float] = {}
    cursor = start
    while cursor < end:
        m = (cursor.year, cursor.month)
        month_end = date(m[0] + 1, 1, 1) if m[1] == 12 else date(m[0], m[1] + 1, 1)
        stop = min(month_end, end)
        out[m] = amount * (stop - cursor).days / total_days
        cursor = stop
    keys = list(out)
    fixed = _correct([out[k] for k in keys], amount)
    return dict(zip(keys, fixed))


def days_in_month(m: Month) -> int:
    return calendar.monthrange(*m)[1]


def carry_intensive(value: float, start: date, end: date) -> dict[Month, float]:
    """Repeat a non-time-scaling quantity in every month the span touches."""
    if not start < end:
        raise DomainError(f"span start {start} is not before end {end}")
    last_day = end - timedelta(days=1)
    return {m: value for m in month_range((start.year, start.month), (last_day.year, last_day.month))}


def disaggregate_period(
    period: Period,
    amount: float,
    *,
    profile: Sequence[float] | None = None,
    intensive: bool = False,
) -> tuple[dict[Month, float], FillFlag]:
    """Resample one record to calendar months.

    Monthly records pass through; calendar quarters split evenly; calendar
    years follow ``profile`` (uniform when absent); anything else is
    apportioned by day overlap. Intensive quantities are carried unchanged.
    """
    if intensive:
        return carry_intensive(amount, period.start, period.end), FillFlag.OBSERVED
    s = period.start
    if period == Period.month(s.year, s.month):
        return {(s.year, s.month): amount}, FillFlag.OBSERVED
    if s.day == 1 and s.month in (1, 4, 7, 10):
        q = (s.month - 1) // 3 + 1
        if period.end == Period.quarter(s.year, q).end:
            parts = quarterly_to_monthly(amount)
            return {(s.year, s.month + i): parts[i] for i in range(3)}, FillFlag.PROFILE_SPLIT
    if s.day == 1 and s.month == 1 and period.end == date(s.year + 1, 1, 1):
        weights = list(profile) if profile is not None else [1.0 / 12] * 12
        parts = annual_to_monthly(amount, weights)
        return {(s.year, i + 1): parts[i] for i in range(12)}, FillFlag.PROFILE_SPLIT
    return span_to_monthly(period.start, period.end, amount), FillFlag.SPAN_APPORTIONED


def extrapolate_months(series: MonthlySeries, until: Month) -> MonthlySeries:
    """Extend ``series`` to ``until`` by copying same-month-of-year values.

    Each new month takes the value of the most recent earlier month with the
    same calendar month. When no such month exists the latest available value
    is used instead.
    """
    if not series.values:
        raise UnestimableError(f"{series.asset_id}: nothing to extrapolate from")
    values = dict(series.values)
    flags = dict(series.flags)
    cfs = dict(series.capacity_factors)
    last = max(values)
    if until <= last:
        return MonthlySeries(series.asset_id, series.gas, values, flags, cfs)
    source_last = last
    for m in month_range(next_month(last), until):
        same = [k for k in values if k[1] == m[1] and k <= source_last]
        src = max(same) if same else source_last
        values[m] = values[src]
        flags[m] = FillFlag.MONTH_EXTRAPOLATED
        if src in cfs:
            cfs[m] = cfs[src]
    return MonthlySeries(series.asset_id, series.gas, values, flags, cfs)


def monthly_from_records(
    records: Iterable[tuple[Period, float]],
    *,
    profile: Sequence[float] | None = None,
    intensive: bool = False,
) -> tuple[dict[Month, float], dict[Month, FillFlag]]:
    """Resample and sum a set of (period, amount) observations to months."""
    values: dict[Month, float] = {}
    flags: dict[Month, FillFlag] = {}
    for period, amount in sorted(records, key=lambda r: (r[0].start, r[0].end, r[1])):
        parts, flag = disaggregate_period(period, amount, profile=profile, intensive=intensive)
        for m, v in parts.items():
            if m in values and intensive:
                continue
            values[m] = values.get(m, 0.0) + v
            if flags.get(m, FillFlag.OBSERVED) is FillFlag.OBSERVED:
                flags[m] = flag
    return values, flags


def uniform_profile() -> list[float]:
    return [1.0 / 12] * 12


def average_by_month(series: Iterable[Mapping[Month, float]]) -> dict[Month, float]:
    """Arithmetic mean per month across several series."""
    sums: dict[Month, list[float]] = {}
    for s in series:
        for m, v in s.items():
            sums.setdefault(m, []).append(v)
    return {m: math.fsum(vs) / len(vs) for m, vs in sums.items()}
