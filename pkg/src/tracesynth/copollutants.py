"""Non-GHG pollutant estimation.

Subsectors on the direct path multiply asset activity by pollutant emission
factors. All others scale each asset's CO2e by a country-level ratio of
pollutant mass to CO2e taken from reference inventories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import DomainError, WrongPathError
from .model import (
    ConfidenceLevel,
    EmissionRecord,
    Gas,
    GwpTable,
    Period,
    PollutantPath,
    Provenance,
    Subsector,
    compute_emissions,
    to_co2e,
)

log = logging.getLogger(__name__)

EXACT = "exact"
FUEL_COLLAPSED = "fuel_collapsed"
REGION = "region"
GLOBAL = "global"


@dataclass(frozen=True)
class ReferenceRow:
    subsector: str
    country: str
    gas: Gas
    tonnes: float
    fuel: str | None = None
    region: str | None = None

    @property
    def key(self) -> tuple[str, Gas, str, str | None]:
        return (self.subsector, self.gas, self.country, self.fuel)


def compute_ratio(pollutant_mass: float, co2e_mass: float) -> float | None:
    """Tonnes of pollutant per tonne CO2e, or ``None`` when undefined."""
    if pollutant_mass < 0 or co2e_mass < 0:
        raise DomainError("masses must be non-negative")
    if co2e_mass == 0:
        if pollutant_mass > 0:
            log.info("ratio undefined: %s t pollutant over zero CO2e", pollutant_mass)
        return None
    return pollutant_mass / co2e_mass


def merge_reference(primary: Iterable[ReferenceRow], secondary: Iterable[ReferenceRow]) -> list[ReferenceRow]:
    """Keep every primary row and add secondary rows for keys it lacks."""
    merged = {r.key: r for r in primary}
    for r in secondary:
        merged.setdefault(r.key, r)
    return [merged[k] for k in sorted(merged, key=_sort_key)]


def _sort_key(key: tuple) -> tuple:
    return tuple("" if v is None else str(v) for v in key)


@dataclass(frozen=True)
class RatioLookup:
    ratio: float
    level: str

    @property
    def is_fallback(self) -> bool:
        return self.level in (REGION, GLOBAL)


@dataclass
class RatioTable:
    """Co-pollutant ratios keyed by (subsector, gas, country, fuel).

    Coarser tables collapse the finer ones by CO2e weighting, i.e. they hold
    pooled pollutant mass over pooled CO2e.
    """

    exact: dict[tuple[str, Gas, str, str | None], float] = field(default_factory=dict)
    by_country: dict[tuple[str, Gas, str], float] = field(default_factory=dict)
    by_region: dict[tuple[str, Gas, str], float] = field(default_factory=dict)
    by_global: dict[tuple[str, Gas], float] = field(default_factory=dict)
    regions: dict[str, str] = field(default_factory=dict)
    horizon: int = 100
    diagnostics: list[str] = field(default_factory=list)

    def lookup(self, subsector: str, gas: Gas, country: str, fuel: str | None = None) -> RatioLookup | None:
        if (subsector, gas, country, fuel) in self.exact:
            return RatioLookup(self.exact[(subsector, gas, country, fuel)], EXACT)
        if (subsector, gas, country) in self.by_country:
            return RatioLookup(self.by_country[(subsector, gas, country)], FUEL_COLLAPSED)
        region = self.regions.get(country)
        if region is not None and (subsector, gas, region) in self.by_region:
            return RatioLookup(self.by_region[(subsector, gas, region)], REGION)
        if (subsector, gas) in self.by_global:
            return RatioLookup(self.by_global[(subsector, gas)], GLOBAL)
        return None

    def rows(self) -> list[tuple[str, str, str, str, float]]:
        """Exact entries as (subsector, gas, country, fuel, ratio), sorted."""
        return sorted(
            (s, g.value, c, f or "", r) for (s, g, c, f), r in self.exact.items()
        )


def build_ratio_table(
    ghg_rows: Iterable[ReferenceRow],
    pollutant_rows: Iterable[ReferenceRow],
    gwp: GwpTable,
    horizon: int,
) -> RatioTable:
    """Derive co-pollutant ratios from reference GHG and pollutant inventories."""
    co2e_parts: dict[tuple[str, str, str | None], dict[Gas, float]] = {}
    regions: dict[str, str] = {}
    for row in ghg_rows:
        if not row.gas.is_ghg:
            raise DomainError(f"reference GHG table holds {row.gas}")
        parts = co2e_parts.setdefault((row.subsector, row.country, row.fuel), {})
        parts[row.gas] = parts.get(row.gas, 0.0) + row.tonnes
        if row.region:
            regions[row.country] = row.region
    co2e = {k: to_co2e(v, gwp, horizon) for k, v in co2e_parts.items()}

    em: dict[tuple[str, Gas, str, str | None], float] = {}
    for row in pollutant_rows:
        if not row.gas.is_pollutant:
            raise DomainError(f"reference pollutant table holds {row.gas}")
        em[row.key] = em.get(row.key, 0.0) + row.tonnes
        if row.region:
            regions.setdefault(row.country, row.region)

    table = RatioTable(regions=regions, horizon=horizon)
    pooled_c: dict[tuple, list[float]] = {}
    pooled_r: dict[tuple, list[float]] = {}
    pooled_g: dict[tuple, list[float]] = {}

    def pool(d: dict, key: tuple, e: float, c: float) -> None:
        acc = d.setdefault(key, [0.0, 0.0])
        acc[0] += e
        acc[1] += c

    for key in sorted(em, key=_sort_key):
        s, g, c, f = key
        base = co2e.get((s, c, f))
        if base is None:
            table.diagnostics.append(f"no reference GHG row for {s}/{c}/{f or '-'}; {g} skipped")
            continue
        ratio = compute_ratio(em[key], base)
        if ratio is None:
            table.diagnostics.append(f"zero CO2e for {s}/{c}/{f or '-'}; {g} skipped")
            continue
        table.exact[key] = ratio
        pool(pooled_c, (s, g, c), em[key], base)
        if c in regions:
            pool(pooled_r, (s, g, regions[c]), em[key], base)
        pool(pooled_g, (s, g), em[key], base)

    table.by_country = {k: e / c for k, (e, c) in pooled_c.items()}
    table.by_region = {k: e / c for k, (e, c) in pooled_r.items()}
    table.by_global = {k: e / c for k, (e, c) in pooled_g.items()}
    return table


def scale_pollutants(
    co2e_records: Iterable[EmissionRecord],
    table: RatioTable,
    pollutants: Sequence[Gas],
) -> tuple[list[EmissionRecord], list[str]]:
    """Pollutant records from CO2e records and co-pollutant ratios.

    Confidence is capped at medium since the ratio is a country-level factor.
    Keys without any applicable ratio produce no record and a diagnostic.
    """
    out: list[EmissionRecord] = []
    notes: list[str] = []
    for rec in co2e_records:
        if not rec.gas.is_derived:
            raise DomainError(f"expected a CO2e record, got {rec.gas}")
        for gas in pollutants:
            hit = table.lookup(rec.subsector, gas, rec.country or "", rec.fuel)
            if hit is None:
                notes.append(f"no {gas} ratio for {rec.subsector}/{rec.country}; omitted for {rec.source}")
                continue
            out.append(
                replace(
                    rec,
                    gas=gas,
                    amount=rec.amount * hit.ratio,
                    provenance=Provenance.MODELED,
                    confidence=min(rec.confidence, ConfidenceLevel.MEDIUM),
                )
            )
    return out, notes


def direct_pollutants(
    subsector: Subsector,
    gas: Gas,
    activity: float,
    emission_factor: float,
    *,
    source: str,
    period: Period,
    country: str | None = None,
    confidence: ConfidenceLevel = ConfidenceLevel.MEDIUM,
) -> EmissionRecord:
    """Pollutant record from activity and a pollutant emission factor."""
    if not gas.is_pollutant:
        raise DomainError(f"{gas} is not a non-GHG pollutant")
    if subsector.path_for(gas) is not PollutantPath.DIRECT:
        raise WrongPathError(f"{subsector.id} estimates {gas} through co-pollutant ratios")
    return EmissionRecord(
        source=source,
        subsector=subsector.id,
        gas=gas,
        period=period,
        amount=compute_emissions(activity, emission_factor),
        provenance=Provenance.MODELED,
        confidence=confidence,
        country=country,
    )


def co2e_by_key(
    ghg_rows: Iterable[ReferenceRow], gwp: GwpTable, horizon: int
) -> dict[tuple[str, str, str | None], float]:
    """Reference CO2e per (subsector, country, fuel)."""
    parts: dict[tuple[str, str, str | None], dict[Gas, float]] = {}
    for row in ghg_rows:
        d = parts.setdefault((row.subsector, row.country, row.fuel), {})
        d[row.gas] = d.get(row.gas, 0.0) + row.tonnes
    return {k: to_co2e(v, gwp, horizon) for k, v in parts.items()}


def pollutant_totals(records: Iterable[EmissionRecord]) -> dict[tuple[str, Gas, str, str | None], float]:
    acc: dict[tuple[str, Gas, str, str | None], list[float]] = {}
    for r in records:
        acc.setdefault((r.subsector, r.gas, r.country or "", r.fuel), []).append(r.amount)
    return {k: math.fsum(v) for k, v in acc.items()}
