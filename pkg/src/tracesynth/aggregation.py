"""Administrative rollups and inventory export.

Records are assigned to GADM levels 0-2 and to functional urban areas (FUA)
through a precomputed source -> unit lookup. A record with no sub-national
location lands in a virtual ``<parent>.unlocated`` child at every level below
its country, so per-level totals always add up to the same global total.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .disaggregation import largest_remainder_round
from .errors import DomainError, InputValidationError, UsageError
from .ingest import read_table
from .model import ConfidenceLevel, EmissionRecord, Gas, Granularity, Period, Provenance
from .quality import combine_additive
from .temporal import FillFlag, Month, MonthlySeries, month_range

log = logging.getLogger(__name__)

GADM0, GADM1, GADM2, FUA = "gadm0", "gadm1", "gadm2", "fua"
LEVELS = (GADM0, GADM1, GADM2, FUA)
UNLOCATED = "unlocated"

EXPORT_COLUMNS = (
    "unit_id",
    "level",
    "subsector",
    "gas",
    "period_start",
    "period_end",
    "tonnes",
    "provenance",
    "confidence",
    "uncertainty_pct",
)
FORMATS = ("csv", "geojson")


def unlocated_child(parent: str) -> str:
    return f"{parent}.{UNLOCATED}"


@dataclass(frozen=True)
class AdminUnit:
    id: str
    level: str
    parent: str | None = None


@dataclass(frozen=True)
class Placement:
    gadm0: str | None = None
    gadm1: str | None = None
    gadm2: str | None = None
    fuas: tuple[str, ...] = ()


@dataclass
class BoundaryIndex:
    """Source id -> administrative placement, plus the implied unit tree."""

    placements: dict[str, Placement] = field(default_factory=dict)
    units: dict[str, AdminUnit] = field(default_factory=dict)

    @classmethod
    def from_placements(cls, placements: Mapping[str, Placement]) -> "BoundaryIndex":
        units: dict[str, AdminUnit] = {}
        problems = []

        def add(unit: AdminUnit) -> None:
            old = units.get(unit.id)
            if old is not None and old != unit:
                problems.append(f"unit {unit.id} placed under both {old.parent} and {unit.parent}")
            units[unit.id] = unit

        for sid, p in sorted(placements.items()):
            if p.gadm0 is None and (p.gadm1 or p.gadm2):
                problems.append(f"{sid}: sub-national unit without a country")
                continue
            if p.gadm2 and not p.gadm1:
                problems.append(f"{sid}: gadm2 without gadm1")
                continue
            if p.gadm0:
                add(AdminUnit(p.gadm0, GADM0))
            if p.gadm1:
                add(AdminUnit(p.gadm1, GADM1, p.gadm0))
            if p.gadm2:
                add(AdminUnit(p.gadm2, GADM2, p.gadm1))
            for f in p.fuas:
                add(AdminUnit(f, FUA))
        if problems:
            raise DomainError("; ".join(problems))
        return cls(dict(sorted(placements.items())), dict(sorted(units.items())))

    def place(self, record: EmissionRecord) -> Placement | None:
        """Full placement of a record, unlocated children filled in.

        Returns ``None`` when the record cannot be tied to any country.
        """
        known = self.placements.get(record.source)
        country = (known.gadm0 if known else None) or record.country
        if not country:
            return None
        g1 = known.gadm1 if known and known.gadm1 else unlocated_child(country)
        g2 = known.gadm2 if known and known.gadm2 else unlocated_child(g1)
        return Placement(country, g1, g2, known.fuas if known else ())

    def units_for(self, record: EmissionRecord, level: str) -> list[str] | None:
        p = self.place(record)
        if p is None:
            return None
        if level == FUA:
            return list(p.fuas)
        return [getattr(p, level)]


def load_boundaries(path: str | Path) -> BoundaryIndex:
    """Load ``boundaries.csv`` (source_id, gadm0, gadm1, gadm2, fua).

    ``fua`` may list several urban areas separated by ``;``.
    """
    table = read_table(path, ("source_id", "gadm0"), ("gadm1", "gadm2", "fua"))
    placements: dict[str, Placement] = {}
    problems = []
    for lineno, row in table.rows:
        if "__error__" in row:
            problems.append((lineno, row["__error__"]))
            continue
        sid = row["source_id"]
        if sid in placements:
            problems.append((lineno, f"duplicate source {sid!r}"))
            continue
        fuas = tuple(sorted({f.strip() for f in row.get("fua", "").split(";") if f.strip()}))
        placements[sid] = Placement(
            row.get("gadm0") or None, row.get("gadm1") or None, row.get("gadm2") or None, fuas
        )
    if problems:
        raise InputValidationError(table.path, problems)
    try:
        return BoundaryIndex.from_placements(placements)
    except DomainError as exc:
        raise InputValidationError(table.path, [(0, str(exc))]) from None


@dataclass(frozen=True)
class UnitTotal:
    unit_id: str
    level: str
    subsector: str
    gas: Gas
    period: Period
    tonnes: float
    provenance: Provenance
    confidence: ConfidenceLevel
    uncertainty: float | None = None


@dataclass
class RollupResult:
    rows: list[UnitTotal]
    quarantined: list[EmissionRecord] = field(default_factory=list)

    def totals(self) -> dict[str, float]:
        acc: dict[str, list[float]] = {}
        for r in self.rows:
            acc.setdefault(r.unit_id, []).append(r.tonnes)
        return {u: math.fsum(v) for u, v in sorted(acc.items())}


def _bucket(period: Period, granularity: Granularity) -> Period:
    if granularity is Granularity.MONTHLY:
        if period.granularity is not Granularity.MONTHLY:
            if period != Period.month(period.start.year, period.start.month):
                raise DomainError(f"record period {period} is not a calendar month")
        return Period.month(period.start.year, period.start.month)
    if granularity is Granularity.ANNUAL:
        y = period.start.year
        if period.end > date(y + 1, 1, 1):
            raise DomainError(f"record period {period} crosses a year boundary")
        return Period.year(y)
    raise UsageError(f"rollups support monthly or annual periods, not {granularity}")


def rollup(
    records: Iterable[EmissionRecord],
    level: str,
    index: BoundaryIndex,
    granularity: Granularity = Granularity.MONTHLY,
) -> RollupResult:
    """Sum records per (unit, subsector, gas, period, provenance) at one level.

    Records with no resolvable country are quarantined. Group confidence is
    the lowest contributing level; uncertainty combines contributors by
    quantity-weighted quadrature when every contributor has one.
    """
    if level not in LEVELS:
        raise UsageError(f"unknown level {level!r}")
    groups: dict[tuple, list[EmissionRecord]] = {}
    quarantined = []
    # records repeat sources and months many times over
    unit_cache: dict[tuple[str, str | None], list[str] | None] = {}
    bucket_cache: dict[Period, Period] = {}
    for rec in records:
        ukey = (rec.source, rec.country)
        if ukey not in unit_cache:
            unit_cache[ukey] = index.units_for(rec, level)
        units = unit_cache[ukey]
        if units is None:
            quarantined.append(rec)
            continue
        bucket = bucket_cache.get(rec.period)
        if bucket is None:
            bucket = bucket_cache[rec.period] = _bucket(rec.period, granularity)
        for unit in units:
            key = (unit, rec.subsector, rec.gas, bucket.start, rec.provenance)
            groups.setdefault(key, []).append(rec)
    if quarantined:
        log.warning("%d record(s) without a country quarantined", len(quarantined))
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        unit, sub, _, _, _ = key
        first = recs[0]
        amounts = [r.amount for r in recs]
        if all(r.uncertainty is not None for r in recs):
            unc = combine_additive(amounts, [r.uncertainty for r in recs])  # type: ignore[misc]
        else:
            unc = None
        rows.append(
            UnitTotal(
                unit,
                level,
                sub,
                first.gas,
                bucket_cache[first.period],
                math.fsum(amounts),
                first.provenance,
                min(r.confidence for r in recs),
                unc,
            )
        )
    return RollupResult(rows, quarantined)


def rank_assets(
    records: Iterable[EmissionRecord],
    index: BoundaryIndex,
    unit_id: str,
    level: str,
    gas: Gas,
    *,
    subsector: str | None = None,
    period: Period | None = None,
) -> list[tuple[str, float]]:
    """Assets in a unit ordered by emitted mass, largest first, ties by id."""
    totals: dict[str, list[float]] = {}
    for rec in records:
        if rec.provenance is Provenance.REMAINDER or rec.gas is not gas:
            continue
        if subsector is not None and rec.subsector != subsector:
            continue
        if period is not None and not (period.start <= rec.period.start and rec.period.end <= period.end):
            continue
        units = index.units_for(rec, level)
        if not units or unit_id not in units:
            continue
        totals.setdefault(rec.source, []).append(rec.amount)
    summed = [(aid, math.fsum(v)) for aid, v in totals.items()]
    return sorted(summed, key=lambda kv: (-kv[1], kv[0]))


def unit_timeseries(
    records: Iterable[EmissionRecord],
    index: BoundaryIndex,
    unit_id: str,
    level: str,
    gas: Gas,
    window: tuple[Month, Month],
) -> MonthlySeries:
    """Monthly totals for one unit; months without records are zero-filled."""
    months = month_range(*window)
    acc: dict[Month, list[float]] = {m: [] for m in months}
    for rec in records:
        if rec.gas is not gas:
            continue
        m = (rec.period.start.year, rec.period.start.month)
        if m not in acc:
            continue
        units = index.units_for(rec, level)
        if units and unit_id in units:
            acc[m].append(rec.amount)
    values = {m: math.fsum(v) for m, v in acc.items()}
    flags = {m: FillFlag.OBSERVED if acc[m] else FillFlag.ZERO_FILLED for m in months}
    return MonthlySeries(unit_id, gas, values, flags)


# -- export -----------------------------------------------------------------


@dataclass(frozen=True)
class ExportRow:
    unit_id: str
    level: str
    subsector: str
    gas: str
    period_start: date
    period_end: date
    tonnes: float
    provenance: str
    confidence: str
    uncertainty: float | None = None

    def sort_key(self) -> tuple:
        return (self.level, self.unit_id, self.subsector, self.gas, self.period_start, self.period_end, self.provenance)

    @classmethod
    def from_record(cls, rec: EmissionRecord, level: str) -> "ExportRow":
        return cls(
            rec.source,
            level,
            rec.subsector,
            rec.gas.value,
            rec.period.start,
            rec.period.end,
            rec.amount,
            rec.provenance.value,
            rec.confidence.label,
            rec.uncertainty,
        )

    @classmethod
    def from_total(cls, t: UnitTotal) -> "ExportRow":
        return cls(
            t.unit_id,
            t.level,
            t.subsector,
            t.gas.value,
            t.period.start,
            t.period.end,
            t.tonnes,
            t.provenance.value,
            t.confidence.label,
            t.uncertainty,
        )


def _num(x: float | int | None) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def _integral(rows: Sequence[ExportRow]) -> list[tuple[ExportRow, int]]:
    groups: dict[tuple, list[int]] = {}
    for i, r in enumerate(rows):
        groups.setdefault((r.level, r.subsector, r.gas, r.period_start, r.period_end), []).append(i)
    out: list[int] = [0] * len(rows)
    for idxs in groups.values():
        for i, v in zip(idxs, largest_remainder_round([rows[i].tonnes for i in idxs])):
            out[i] = v
    return list(zip(rows, out))


def export_inventory(
    rows: Iterable[ExportRow],
    path: str | Path,
    fmt: str = "csv",
    *,
    metadata: Mapping | None = None,
    locations: Mapping[str, tuple[float, float]] | None = None,
    integral: bool = False,
) -> Path:
    """Write rows as a tabular file or a GeoJSON feature collection.

    Output is byte-deterministic: rows are sorted, floats use their shortest
    round-trip form, JSON keys are sorted. ``metadata`` is embedded as a
    leading ``#`` comment line (CSV) or a top-level member (GeoJSON). With
    ``integral`` tonnes are rounded so each (level, subsector, gas, period)
    group keeps its rounded total.
    """
    if fmt not in FORMATS:
        raise UsageError(f"unknown export format {fmt!r}; choose from {', '.join(FORMATS)}")
    ordered = sorted(rows, key=ExportRow.sort_key)
    valued: list[tuple[ExportRow, float | int]] = (
        _integral(ordered) if integral else [(r, r.tonnes) for r in ordered]  # type: ignore[misc]
    )
    path = Path(path)
    meta = json.dumps(dict(metadata or {}), sort_keys=True, separators=(",", ":"))
    if fmt == "csv":
        buf = io.StringIO()
        if metadata is not None:
            buf.write(f"# metadata: {meta}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EXPORT_COLUMNS)
        for r, tonnes in valued:
            w.writerow(
                [
                    r.unit_id,
                    r.level,
                    r.subsector,
                    r.gas,
                    r.period_start.isoformat(),
                    r.period_end.isoformat(),
                    _num(tonnes),
                    r.provenance,
                    r.confidence,
                    _num(r.uncertainty),
                ]
            )
        path.write_bytes(buf.getvalue().encode("utf-8"))
        return path

    locations = locations or {}
    features = []
    for r, tonnes in valued:
        loc = locations.get(r.unit_id)
        geometry = {"type": "Point", "coordinates": [loc[1], loc[0]]} if loc else None
        features.append(
            {
                "type": "Feature",
                "geometry": geometry,
                "properties": {
                    "unit_id": r.unit_id,
                    "level": r.level,
                    "subsector": r.subsector,
                    "gas": r.gas,
                    "period_start": r.period_start.isoformat(),
                    "period_end": r.period_end.isoformat(),
                    "tonnes": tonnes,
                    "provenance": r.provenance,
                    "confidence": r.confidence,
                    "uncertainty_pct": r.uncertainty,
                },
            }
        )
    doc = {"type": "FeatureCollection", "metadata": dict(metadata or {}), "features": features}
    path.write_bytes((json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8"))
    return path


def load_inventory(path: str | Path) -> list[ExportRow]:
    """Read an exported tabular inventory back into rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    missing = [c for c in EXPORT_COLUMNS[:-1] if c not in (reader.fieldnames or [])]
    if missing:
        raise InputValidationError(str(path), [(1, f"header lacks {', '.join(missing)}")])
    out = []
    for row in reader:
        out.append(
            ExportRow(
                row["unit_id"],
                row["level"],
                row["subsector"],
                row["gas"],
                date.fromisoformat(row["period_start"]),
                date.fromisoformat(row["period_end"]),
                float(row["tonnes"]),
                row["provenance"],
                row["confidence"],
                float(row["uncertainty_pct"]) if row.get("uncertainty_pct") else None,
            )
        )
    return out


def rows_to_records(rows: Iterable[ExportRow], countries: Mapping[str, str] | None = None) -> list[EmissionRecord]:
    """Turn source-level export rows back into records for re-aggregation."""
    countries = countries or {}
    out = []
    for r in rows:
        start, end = r.period_start, r.period_end
        gran = Granularity.MONTHLY if Period.month(start.year, start.month).end == end and start.day == 1 else Granularity.SPAN
        out.append(
            EmissionRecord(
                source=r.unit_id,
                subsector=r.subsector,
                gas=Gas.parse(r.gas),
                period=Period(start, end, gran),
                amount=r.tonnes,
                provenance=Provenance(r.provenance),
                confidence=ConfidenceLevel.parse(r.confidence),
                uncertainty=r.uncertainty,
                country=countries.get(r.unit_id) or (r.unit_id if r.level == "country" else None),
            )
        )
    return out
