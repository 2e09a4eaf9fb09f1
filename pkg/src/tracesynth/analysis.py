"""Trend statistics and city classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import UsageError

GDP_THRESHOLD = 57_333.0
HIGHER = "higher"
LOWER = "lower"


@dataclass
class TrendResult:
    unit_id: str
    window: tuple[int, int] | None
    steps: list[float | None]
    mean_change: float
    cagr: float
    diagnostics: list[str] = field(default_factory=list)


def pct_change_series(
    totals: Sequence[float], *, unit_id: str = "", years: Sequence[int] | None = None
) -> TrendResult:
    """Year-on-year percent changes and their arithmetic mean.

    A step whose base value is not positive is undefined: it is stored as
    ``None``, left out of the mean and noted in ``diagnostics``. The compound
    annual growth rate between the first and last values is reported too.
    """
    if len(totals) < 2:
        raise UsageError("need at least two values for a trend")
    diagnostics = []
    steps: list[float | None] = []
    for t in range(1, len(totals)):
        base = totals[t - 1]
        if base <= 0:
            steps.append(None)
            diagnostics.append(f"step {t}: base value {base} is not positive")
            continue
        steps.append((totals[t] - base) / base * 100.0)
    defined = [s for s in steps if s is not None]
    if len(defined) == 0:
        raise UsageError("no defined steps: need two positive anchor values")
    mean = math.fsum(defined) / len(defined)
    first, last = totals[0], totals[-1]
    if first > 0 and last > 0:
        cagr = ((last / first) ** (1.0 / (len(totals) - 1)) - 1.0) * 100.0
    else:
        cagr = math.nan
        diagnostics.append("CAGR undefined: non-positive endpoint")
    window = (years[0], years[-1]) if years else None
    return TrendResult(unit_id, window, steps, mean, cagr, diagnostics)


@dataclass(frozen=True)
class JenksResult:
    breaks: list[float]  # upper bound of every class except the last
    classes: list[int]   # class index per input value, input order
    ssd: float           # total within-class sum of squared deviations
    degenerate: bool = False

    def classify(self, value: float) -> int:
        for i, b in enumerate(self.breaks):
            if value <= b:
                return i
        return len(self.breaks)


def _ssd_table(xs: Sequence[float]) -> list[list[float]]:
    n = len(xs)
    table = [[0.0] * (n + 1) for _ in range(n + 1)]
    for i in range(n):
        # Welford update; the naive sum-of-squares form cancels badly for
        # values in the tens of thousands
        mean = m2 = 0.0
        for j in range(i, n):
            w = j - i + 1
            delta = xs[j] - mean
            mean += delta / w
            m2 += delta * (xs[j] - mean)
            table[i][j + 1] = m2
    return table


def jenks_breaks(values: Sequence[float], k: int) -> JenksResult:
    """Exact Jenks natural breaks by dynamic programming.

    Minimises the total within-class sum of squared deviations over all
    partitions of the sorted values into ``k`` contiguous classes. Among
    equal-cost partitions the one with the lowest break positions wins.
    """
    n = len(values)
    if k < 2:
        raise UsageError(f"need at least 2 classes, got {k}")
    if k > n:
        raise UsageError(f"cannot form {k} classes from {n} values")
    xs = sorted(float(v) for v in values)
    cost = _ssd_table(xs)
    inf = math.inf
    # best[c][j]: minimal cost of the first j values in c classes
    best = [[inf] * (n + 1) for _ in range(k + 1)]
    cut = [[0] * (n + 1) for _ in range(k + 1)]
    best[0][0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, n + 1):
            for i in range(c - 1, j):
                cand = best[c - 1][i] + cost[i][j]
                # strict < keeps the lowest cut among ties
                if cand < best[c][j] - 1e-12 * max(1.0, abs(best[c][j])) or best[c][j] == inf:
                    best[c][j] = cand
                    cut[c][j] = i
    bounds = []
    j = n
    for c in range(k, 0, -1):
        i = cut[c][j]
        bounds.append(i)
        j = i
    starts = sorted(bounds)[1:]  # first index of classes 2..k
    breaks = [xs[s - 1] for s in starts]
    degenerate = xs[0] == xs[-1] or len(set(breaks)) < len(breaks)
    result = JenksResult(breaks, [], best[k][n], degenerate)
    classes = [result.classify(v) for v in values]
    return JenksResult(breaks, classes, best[k][n], degenerate)


def within_class_ssd(groups: Sequence[Sequence[float]]) -> float:
    total = 0.0
    for g in groups:
        if g:
            m = math.fsum(g) / len(g)
            total += math.fsum((x - m) ** 2 for x in g)
    return total


def classify_by_threshold(values: Sequence[float], threshold: float = GDP_THRESHOLD) -> list[str]:
    """Label each value ``higher`` (at or above threshold) or ``lower``."""
    return [HIGHER if v >= threshold else LOWER for v in values]


@dataclass(frozen=True)
class GroupComparison:
    share_rising: dict[str, float]
    mean_change: dict[str, float]
    mean_rise: dict[str, float]
    ratio_of_mean_changes: float
    ratio_of_mean_rises: float


def compare_groups(changes: Mapping[str, float], labels: Mapping[str, str]) -> GroupComparison:
    """Contrast lower- and higher-GDP units by their emissions change (%).

    Two readings of "increases were N times higher" are reported: the ratio of
    mean change over all units, and the ratio of mean change over rising units
    only.
    """
    groups: dict[str, list[float]] = {HIGHER: [], LOWER: []}
    for unit, change in changes.items():
        groups[labels[unit]].append(change)
    share, mean, rise = {}, {}, {}
    for name, vals in groups.items():
        rising = [v for v in vals if v > 0]
        share[name] = len(rising) / len(vals) if vals else math.nan
        mean[name] = math.fsum(vals) / len(vals) if vals else math.nan
        rise[name] = math.fsum(rising) / len(rising) if rising else math.nan

    def ratio(d: dict[str, float]) -> float:
        if math.isnan(d[LOWER]) or math.isnan(d[HIGHER]) or d[HIGHER] == 0:
            return math.nan
        return d[LOWER] / d[HIGHER]

    return GroupComparison(share, mean, rise, ratio(mean), ratio(rise))
