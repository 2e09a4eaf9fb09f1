"""Confidence levels, uncertainty propagation and validation metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, DomainError, UsageError
from .model import ConfidenceLevel

EF_GRANULARITIES = ("asset", "regional", "country", "global")  # finest first
ACTIVITY_SOURCES = ("reported", "satellite-modeled", "proxy", "imputed")


@dataclass(frozen=True)
class Evidence:
    ef_granularity: str
    activity_source: str


@dataclass(frozen=True)
class ConfidenceRubric:
    rules: Mapping[tuple[str, str], ConfidenceLevel]

    def __post_init__(self) -> None:
        missing = [
            (g, a)
            for g in EF_GRANULARITIES
            for a in ACTIVITY_SOURCES
            if (g, a) not in self.rules
        ]
        if missing:
            raise ConfigError(f"rubric is missing {missing}")
        for a in ACTIVITY_SOURCES:
            levels = [self.rules[(g, a)] for g in EF_GRANULARITIES]
            if any(finer < coarser for finer, coarser in zip(levels, levels[1:])):
                raise ConfigError(
                    f"rubric not monotone: finer EF lowers confidence for activity {a!r}"
                )

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping[str, str]]) -> "ConfidenceRubric":
        rules: dict[tuple[str, str], ConfidenceLevel] = {}
        for row in rows:
            key = (row["ef_granularity"].strip(), row["activity_source"].strip())
            if key[0] not in EF_GRANULARITIES or key[1] not in ACTIVITY_SOURCES:
                raise ConfigError(f"unknown rubric descriptor {key}")
            if key in rules:
                raise ConfigError(f"duplicate rubric rule {key}")
            rules[key] = ConfidenceLevel.parse(row["level"])
        return cls(rules)

    @classmethod
    def from_csv(cls, path: str | Path) -> "ConfidenceRubric":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls.from_rows(csv.DictReader(line for line in fh if not line.startswith("#")))

    @classmethod
    def default(cls) -> "ConfidenceRubric":
        text = resources.files("tracesynth.data").joinpath("rubric.csv").read_text("utf-8")
        lines = [line for line in text.splitlines() if not line.startswith("#")]
        return cls.from_rows(csv.DictReader(lines))


def assign_confidence(evidence: Evidence, rubric: ConfidenceRubric) -> ConfidenceLevel:
    try:
        return rubric.rules[(evidence.ef_granularity, evidence.activity_source)]
    except KeyError:
        raise DomainError(f"no rubric rule for {evidence}") from None


def propagate_uncertainty(components: Sequence[float]) -> float:
    """Combine relative uncertainties (%) of multiplied factors in quadrature."""
    if any(u < 0 or math.isnan(u) for u in components):
        raise DomainError("uncertainties must be non-negative")
    return math.hypot(*components)


def combine_additive(quantities: Sequence[float], uncertainties: Sequence[float]) -> float:
    """Relative uncertainty (%) of a sum of quantities with their own uncertainties."""
    if len(quantities) != len(uncertainties):
        raise UsageError("quantities and uncertainties differ in length")
    if any(u < 0 for u in uncertainties):
        raise DomainError("uncertainties must be non-negative")
    total = math.fsum(quantities)
    if total == 0:
        return 0.0
    absolute = math.sqrt(math.fsum((q * u) ** 2 for q, u in zip(quantities, uncertainties)))
    return absolute / abs(total)


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mse: float
    mae: float
    r2: float
    spearman: float

    def as_dict(self) -> dict[str, float]:
        return {
            "rmse": self.rmse,
            "mse": self.mse,
            "mae": self.mae,
            "r2": self.r2,
            "spearman": self.spearman,
        }


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks, ties sharing the mean of the positions they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _pearson(x: Sequence[float], y: Sequence[float]) -> float:
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return math.nan
    return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return _pearson(average_ranks(x), average_ranks(y))


def compare_metrics(
    estimates: Sequence[float] | Mapping[str, float],
    reference: Sequence[float] | Mapping[str, float],
) -> Metrics:
    """Agreement between an estimate series and a reference series.

    Mappings are paired by key; sequences by position. R² is the coefficient
    of determination of the estimates against the reference and is NaN when
    the reference is constant. Spearman's rho uses average ranks for ties.
    """
    if isinstance(estimates, Mapping) or isinstance(reference, Mapping):
        if not (isinstance(estimates, Mapping) and isinstance(reference, Mapping)):
            raise UsageError("pair mappings with mappings")
        if set(estimates) != set(reference):
            raise UsageError("estimate and reference keys differ")
        keys = sorted(estimates)
        est = [float(estimates[k]) for k in keys]
        ref = [float(reference[k]) for k in keys]
    else:
        est, ref = [float(v) for v in estimates], [float(v) for v in reference]
    if len(est) != len(ref):
        raise UsageError("series differ in length")
    if len(est) < 2:
        raise UsageError("need at least two paired values")
    n = len(est)
    errors = [e - r for e, r in zip(est, ref)]
    mse = math.fsum(d * d for d in errors) / n
    mae = math.fsum(abs(d) for d in errors) / n
    mean_ref = math.fsum(ref) / n
    ss_tot = math.fsum((r - mean_ref) ** 2 for r in ref)
    r2 = 1.0 - (mse * n) / ss_tot if ss_tot > 0 else math.nan
    return Metrics(math.sqrt(mse), mse, mae, r2, spearman(est, ref))
