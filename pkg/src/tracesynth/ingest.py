"""Loaders for the delimiter-separated input tables.

Every loader parses the whole file before returning. Row-level problems are
collected and raised together as :class:`InputValidationError`, so a bad file
never yields a partially loaded table. Unknown columns are ignored with a
warning. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .copollutants import ReferenceRow
from .errors import DomainError, InputValidationError
from .model import (
    Asset,
    AssetFlags,
    Gas,
    Period,
    PollutantPath,
    Subsector,
)

log = logging.getLogger(__name__)

PROFILE_TOLERANCE = 1e-6
MONTH_COLUMNS = tuple(f"m{i:02d}" for i in range(1, 13))

ASSET_REQUIRED = ("asset_id", "subsector", "country")
ASSET_OPTIONAL = (
    "lat",
    "lon",
    "capacity",
    "capacity_factor",
    "scraped",
    "emitting",
    "has_reported_emissions",
    "output",
    "fuel",
    "quantity_kind",
    "operating_start",
    "operating_end",
    "ef_granularity",
    "activity_source",
    "unc_capacity",
    "unc_capacity_factor",
    "unc_ef",
)
EF_PREFIX = "ef_"


def _is_ef_column(name: str) -> bool:
    return name.startswith(EF_PREFIX) and name not in ASSET_OPTIONAL


@dataclass
class Table:
    """Raw rows of a delimited file with their 1-based line numbers."""

    path: str
    header: list[str]
    rows: list[tuple[int, dict[str, str]]]


def read_table(
    path: str | Path,
    required: Sequence[str],
    optional: Sequence[str] = (),
    *,
    extra_ok: Callable[[str], bool] | None = None,
) -> Table:
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        numbered = [(i, line) for i, line in enumerate(fh, start=1) if not line.startswith("#")]
    if not numbered:
        raise InputValidationError(path, [(1, "missing header")])
    reader = csv.reader(io.StringIO("".join(line for _, line in numbered)))
    header = [h.strip() for h in next(reader)]
    header_line = numbered[0][0]
    missing = [c for c in required if c not in header]
    if missing:
        raise InputValidationError(path, [(header_line, f"header lacks {', '.join(missing)}")])
    known = set(required) | set(optional)
    unknown = [h for h in header if h not in known and not (extra_ok and extra_ok(h))]
    if unknown:
        log.warning("%s: ignoring unknown column(s) %s", path, ", ".join(unknown))
    rows = []
    for (lineno, _), cells in zip(numbered[1:], reader):
        if not any(c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            rows.append((lineno, {"__error__": f"expected {len(header)} fields, got {len(cells)}"}))
            continue
        rows.append((lineno, {h: c.strip() for h, c in zip(header, cells)}))
    if not rows:
        log.warning("%s: no data rows", path)
    return Table(path, header, rows)


def _float(row: Mapping[str, str], col: str, *, required: bool = False) -> float | None:
    text = row.get(col, "")
    if text == "":
        if required:
            raise DomainError(f"{col} is required")
        return None
    try:
        value = float(text)
    except ValueError:
        raise DomainError(f"{col}={text!r} is not a number") from None
    if math.isnan(value) or math.isinf(value):
        raise DomainError(f"{col}={text!r} is not finite")
    return value


def _nonneg(row: Mapping[str, str], col: str, *, required: bool = False) -> float | None:
    value = _float(row, col, required=required)
    if value is not None and value < 0:
        raise DomainError(f"{col}={value} is negative")
    return value


def _bool(row: Mapping[str, str], col: str, default: bool) -> bool:
    text = row.get(col, "").strip().lower()
    if text == "":
        return default
    if text in ("1", "true", "yes", "y", "t"):
        return True
    if text in ("0", "false", "no", "n", "f"):
        return False
    raise DomainError(f"{col}={text!r} is not a boolean")


def _date(row: Mapping[str, str], col: str) -> date | None:
    text = row.get(col, "")
    if not text:
        return None
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise DomainError(f"{col}={text!r} is not an ISO date") from None


def _collect(table: Table, parse: Callable[[Mapping[str, str]], object]) -> list[tuple[int, object]]:
    problems: list[tuple[int, str]] = []
    out = []
    for lineno, row in table.rows:
        if "__error__" in row:
            problems.append((lineno, row["__error__"]))
            continue
        try:
            out.append((lineno, parse(row)))
        except (DomainError, ValueError) as exc:
            problems.append((lineno, str(exc)))
    if problems:
        raise InputValidationError(table.path, problems)
    return out


# -- subsectors ---------------------------------------------------------------

METHOD_MODELED = "modeled"
METHOD_DISAGGREGATED = "disaggregated"


@dataclass(frozen=True)
class SubsectorSpec:
    subsector: Subsector
    method: str = METHOD_MODELED
    profile_id: str | None = None
    emitting_ratio: float | None = None

    @property
    def id(self) -> str:
        return self.subsector.id


def load_subsectors(path: str | Path) -> dict[str, SubsectorSpec]:
    table = read_table(
        path,
        ("subsector",),
        ("ipcc_sector", "method", "pollutant_path", "profile_id", "emitting_ratio"),
    )

    def parse(row: Mapping[str, str]) -> SubsectorSpec:
        method = row.get("method") or METHOD_MODELED
        if method not in (METHOD_MODELED, METHOD_DISAGGREGATED):
            raise DomainError(f"unknown method {method!r}")
        path_text = row.get("pollutant_path") or ""
        try:
            ppath = PollutantPath(path_text) if path_text else None
        except ValueError:
            raise DomainError(f"unknown pollutant_path {path_text!r}") from None
        ratio = _float(row, "emitting_ratio")
        if ratio is not None and not 0 <= ratio <= 1:
            raise DomainError(f"emitting_ratio={ratio} outside [0, 1]")
        return SubsectorSpec(
            Subsector.with_path(row["subsector"], row.get("ipcc_sector", ""), ppath),
            method,
            row.get("profile_id") or None,
            ratio,
        )

    parsed = _collect(table, parse)
    out: dict[str, SubsectorSpec] = {}
    problems = []
    for lineno, spec in parsed:
        if spec.id in out:
            problems.append((lineno, f"duplicate subsector {spec.id!r}"))
        out[spec.id] = spec
    if problems:
        raise InputValidationError(table.path, problems)
    return dict(sorted(out.items()))


# -- assets -----------------------------------------------------------------


@dataclass
class AssetRegistry:
    assets: dict[str, Asset] = field(default_factory=dict)
    ef_columns: tuple[Gas, ...] = ()

    def __post_init__(self) -> None:
        self.assets = dict(sorted(self.assets.items()))

    def __len__(self) -> int:
        return len(self.assets)

    def __iter__(self) -> Iterator[Asset]:
        return iter(self.assets.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AssetRegistry) and self.assets == other.assets

    @property
    def by_subsector(self) -> dict[str, list[Asset]]:
        out: dict[str, list[Asset]] = {}
        for a in self:
            out.setdefault(a.subsector, []).append(a)
        return out

    @property
    def by_country(self) -> dict[str, list[Asset]]:
        out: dict[str, list[Asset]] = {}
        for a in self:
            out.setdefault(a.country, []).append(a)
        return out

    def in_group(self, country: str, subsector: str) -> list[Asset]:
        return [a for a in self if a.country == country and a.subsector == subsector]


def _parse_asset(row: Mapping[str, str], cf_max: float) -> Asset:
    efs = {}
    for col, text in row.items():
        if _is_ef_column(col) and text != "":
            gas = Gas.parse(col[len(EF_PREFIX):])
            if gas.is_derived:
                raise DomainError(f"{col}: CO2e is derived, not an asset gas")
            efs[gas] = _nonneg(row, col)
    lat, lon = _float(row, "lat"), _float(row, "lon")
    if (lat is None) != (lon is None):
        raise DomainError("lat and lon must both be given or both be empty")
    location = (lat, lon) if lat is not None else None
    kind = row.get("quantity_kind") or "extensive"
    if kind not in ("extensive", "intensive"):
        raise DomainError(f"quantity_kind={kind!r} must be extensive or intensive")
    unc = {}
    for col in ("unc_capacity", "unc_capacity_factor", "unc_ef"):
        value = _nonneg(row, col)
        if value is not None:
            unc[col[4:]] = value
    if not row["asset_id"]:
        raise DomainError("asset_id is empty")
    asset = Asset(
        id=row["asset_id"],
        subsector=row["subsector"],
        country=row["country"],
        capacity=_nonneg(row, "capacity"),
        capacity_factor=_nonneg(row, "capacity_factor"),
        emission_factors=efs,
        location=location,
        flags=AssetFlags(
            scraped=_bool(row, "scraped", False),
            emitting=_bool(row, "emitting", True),
            has_reported_emissions=_bool(row, "has_reported_emissions", False),
        ),
        output=_nonneg(row, "output"),
        fuel=row.get("fuel") or None,
        intensive=kind == "intensive",
        operating_start=_date(row, "operating_start"),
        operating_end=_date(row, "operating_end"),
        ef_granularity=row.get("ef_granularity") or "asset",
        activity_source=row.get("activity_source") or "reported",
        uncertainty=unc,
    )
    asset.check_capacity_factor(cf_max)
    return asset


def load_asset_registry(
    path: str | Path,
    subsectors: Iterable[str] | None = None,
    *,
    cf_max: float = 1.0,
) -> AssetRegistry:
    """Load ``assets.csv``.

    Raises:
        InputValidationError: duplicate ids, unknown subsectors (when
            ``subsectors`` is given), bad coordinates or numbers, each with its
            row number.
    """
    table = read_table(
        path, ASSET_REQUIRED, ASSET_OPTIONAL, extra_ok=_is_ef_column
    )
    known = set(subsectors) if subsectors is not None else None
    problems: list[tuple[int, str]] = []
    assets: dict[str, Asset] = {}
    for lineno, row in table.rows:
        if "__error__" in row:
            problems.append((lineno, row["__error__"]))
            continue
        try:
            asset = _parse_asset(row, cf_max)
        except (DomainError, ValueError) as exc:
            problems.append((lineno, str(exc)))
            continue
        if asset.id in assets:
            problems.append((lineno, f"duplicate asset id {asset.id!r}"))
            continue
        if known is not None and asset.subsector not in known:
            problems.append((lineno, f"unknown subsector {asset.subsector!r}"))
            continue
        assets[asset.id] = asset
    if problems:
        raise InputValidationError(table.path, problems)
    ef_cols = tuple(
        sorted((Gas.parse(h[len(EF_PREFIX):]) for h in table.header if _is_ef_column(h)), key=lambda g: g.value)
    )
    return AssetRegistry(assets, ef_cols)


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_asset_registry(registry: AssetRegistry, path: str | Path) -> None:
    gases = sorted(
        {g for a in registry for g in a.emission_factors} | set(registry.ef_columns),
        key=lambda g: g.value,
    )
    header = list(ASSET_REQUIRED) + list(ASSET_OPTIONAL) + [EF_PREFIX + g.value for g in gases]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for a in registry:
            lat, lon = a.location if a.location else (None, None)
            w.writerow(
                [
                    a.id,
                    a.subsector,
                    a.country,
                    _fmt(lat),
                    _fmt(lon),
                    _fmt(a.capacity),
                    _fmt(a.capacity_factor),
                    str(a.flags.scraped).lower(),
                    str(a.flags.emitting).lower(),
                    str(a.flags.has_reported_emissions).lower(),
                    _fmt(a.output),
                    a.fuel or "",
                    "intensive" if a.intensive else "extensive",
                    a.operating_start.isoformat() if a.operating_start else "",
                    a.operating_end.isoformat() if a.operating_end else "",
                    a.ef_granularity,
                    a.activity_source,
                    _fmt(a.uncertainty.get("capacity")),
                    _fmt(a.uncertainty.get("capacity_factor")),
                    _fmt(a.uncertainty.get("ef")),
                ]
                + [_fmt(a.emission_factors.get(g)) for g in gases]
            )


# -- country totals -------------------------------------------------------------

TotalKey = tuple[str, str, Gas, int]  # country, subsector, gas, year


@dataclass
class CountryTotalTable:
    rows: dict[TotalKey, float] = field(default_factory=dict)
    source: str = ""
    uncertainty: dict[TotalKey, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.rows = dict(sorted(self.rows.items(), key=lambda kv: _key_str(kv[0])))

    def get(self, country: str, subsector: str, gas: Gas, year: int) -> float | None:
        return self.rows.get((country, subsector, gas, year))


def _key_str(key: tuple) -> tuple:
    return tuple(v.value if isinstance(v, Gas) else v for v in key)


def load_country_totals(path: str | Path) -> CountryTotalTable:
    table = read_table(
        path, ("country", "subsector", "gas", "year", "tonnes"), ("source", "uncertainty_pct")
    )

    def parse(row: Mapping[str, str]):
        gas = Gas.parse(row["gas"])
        if gas.is_derived:
            raise DomainError("country totals must be given per raw gas, not CO2e")
        key = (row["country"], row["subsector"], gas, int(row["year"]))
        return key, _nonneg(row, "tonnes", required=True), _nonneg(row, "uncertainty_pct"), row.get("source", "")

    parsed = _collect(table, parse)
    rows: dict[TotalKey, float] = {}
    unc: dict[TotalKey, float] = {}
    sources: set[str] = set()
    problems = []
    for lineno, (key, tonnes, u, src) in parsed:
        if key in rows:
            problems.append((lineno, f"duplicate key {'/'.join(map(str, _key_str(key)))}"))
            continue
        rows[key] = tonnes
        if u is not None:
            unc[key] = u
        if src:
            sources.add(src)
    if problems:
        raise InputValidationError(table.path, problems)
    return CountryTotalTable(rows, ";".join(sorted(sources)), unc)


@dataclass(frozen=True)
class CountryActivity:
    economic_output: float
    establishments: int


def load_country_activity(path: str | Path) -> dict[tuple[str, str, int], CountryActivity]:
    table = read_table(path, ("country", "subsector", "year", "economic_output", "establishments"))

    def parse(row: Mapping[str, str]):
        count = _nonneg(row, "establishments", required=True)
        if count != int(count):
            raise DomainError("establishments must be a whole number")
        return (row["country"], row["subsector"], int(row["year"])), CountryActivity(
            _nonneg(row, "economic_output", required=True), int(count)
        )

    out = {}
    problems = []
    for lineno, (key, value) in _collect(table, parse):
        if key in out:
            problems.append((lineno, f"duplicate key {key}"))
        out[key] = value
    if problems:
        raise InputValidationError(table.path, problems)
    return dict(sorted(out.items()))


# -- proxy surfaces -------------------------------------------------------------


@dataclass
class ProxySurface:
    """Non-negative weights over spatial units for one subsector, per country."""

    subsector: str
    cells: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.cells = {c: sorted(v) for c, v in sorted(self.cells.items())}

    def for_country(self, country: str) -> list[tuple[str, float]]:
        return list(self.cells.get(country, []))

    def is_empty(self, country: str) -> bool:
        return math.fsum(w for _, w in self.cells.get(country, [])) <= 0

    @property
    def empty_countries(self) -> list[str]:
        return [c for c in self.cells if self.is_empty(c)]


def load_proxy_surface(path: str | Path) -> dict[str, ProxySurface]:
    """Load ``proxy.csv`` into one surface per subsector."""
    table = read_table(path, ("subsector", "country", "cell_id", "weight"))

    def parse(row: Mapping[str, str]):
        return row["subsector"], row["country"], row["cell_id"], _nonneg(row, "weight", required=True)

    grouped: dict[str, dict[str, list[tuple[str, float]]]] = {}
    seen: set[tuple[str, str, str]] = set()
    problems = []
    for lineno, (sub, country, cell, weight) in _collect(table, parse):
        if (sub, country, cell) in seen:
            problems.append((lineno, f"duplicate cell {cell!r} for {sub}/{country}"))
            continue
        seen.add((sub, country, cell))
        grouped.setdefault(sub, {}).setdefault(country, []).append((cell, weight))
    if problems:
        raise InputValidationError(table.path, problems)
    surfaces = {s: ProxySurface(s, cells) for s, cells in sorted(grouped.items())}
    for s in surfaces.values():
        for c in s.empty_countries:
            log.warning("proxy surface %s is empty for %s", s.subsector, c)
    return surfaces


# -- temporal profiles ------------------------------------------------------------


@dataclass(frozen=True)
class TemporalProfile:
    profile_id: str
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.weights) != 12:
            raise DomainError("a profile has exactly 12 monthly weights")
        if any(w < 0 for w in self.weights):
            raise DomainError("profile weights must be non-negative")
        if abs(math.fsum(self.weights) - 1.0) > 1e-9:
            raise DomainError("profile weights must sum to 1")


def normalize_profile(profile_id: str, weights: Sequence[float]) -> TemporalProfile:
    """Accept weights summing to 1 within 1e-6 and rescale them exactly."""
    total = math.fsum(weights)
    if total <= 0:
        raise DomainError(f"profile {profile_id!r} is all zero")
    if abs(total - 1.0) > PROFILE_TOLERANCE:
        raise DomainError(f"profile {profile_id!r} sums to {total}, not 1")
    return TemporalProfile(profile_id, tuple(w / total for w in weights))


def load_profiles(path: str | Path) -> dict[str, TemporalProfile]:
    table = read_table(path, ("profile_id",) + MONTH_COLUMNS)

    def parse(row: Mapping[str, str]) -> TemporalProfile:
        return normalize_profile(row["profile_id"], [_nonneg(row, c, required=True) for c in MONTH_COLUMNS])

    out: dict[str, TemporalProfile] = {}
    problems = []
    for lineno, prof in _collect(table, parse):
        if prof.profile_id in out:
            problems.append((lineno, f"duplicate profile {prof.profile_id!r}"))
        out[prof.profile_id] = prof
    if problems:
        raise InputValidationError(table.path, problems)
    return dict(sorted(out.items()))


# -- reported emissions -----------------------------------------------------------


@dataclass(frozen=True)
class ReportedRecord:
    asset_id: str
    gas: Gas
    period: Period
    tonnes: float


def load_reported(path: str | Path, assets: Iterable[str] | None = None) -> list[ReportedRecord]:
    """Load ``reported.csv``: asset-level observations over arbitrary periods.

    ``period_end`` is exclusive.
    """
    table = read_table(path, ("asset_id", "gas", "period_start", "period_end", "tonnes"))
    known = set(assets) if assets is not None else None

    def parse(row: Mapping[str, str]) -> ReportedRecord:
        if known is not None and row["asset_id"] not in known:
            raise DomainError(f"unknown asset {row['asset_id']!r}")
        gas = Gas.parse(row["gas"])
        if gas.is_derived:
            raise DomainError("reported emissions must be per raw gas")
        start, end = _date(row, "period_start"), _date(row, "period_end")
        if start is None or end is None:
            raise DomainError("period_start and period_end are required")
        return ReportedRecord(row["asset_id"], gas, Period(start, end), _nonneg(row, "tonnes", required=True))

    recs = [r for _, r in _collect(table, parse)]
    return sorted(recs, key=lambda r: (r.asset_id, r.gas.value, r.period.start, r.period.end, r.tonnes))


# -- co-pollutant references --------------------------------------------------------


def load_reference(path: str | Path) -> list[ReferenceRow]:
    """Load a reference inventory (``reference_ghg.csv`` / ``reference_pollutants.csv``)."""
    table = read_table(path, ("subsector", "country", "gas", "tonnes"), ("region", "fuel"))

    def parse(row: Mapping[str, str]) -> ReferenceRow:
        return ReferenceRow(
            subsector=row["subsector"],
            country=row["country"],
            gas=Gas.parse(row["gas"]),
            tonnes=_nonneg(row, "tonnes", required=True),
            fuel=row.get("fuel") or None,
            region=row.get("region") or None,
        )

    rows = [r for _, r in _collect(table, parse)]
    return sorted(rows, key=lambda r: (r.subsector, r.gas.value, r.country, r.fuel or "", r.tonnes))


# -- cross validation -------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    kind: str
    severity: str  # "error" | "warning"
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.findings)

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def kinds(self) -> set[str]:
        return {f.kind for f in self.findings}


UNALLOCATABLE = "unallocatable"
UNIFORM_FALLBACK = "uniform_fallback"


def validate_inputs(
    registry: AssetRegistry,
    totals: CountryTotalTable,
    proxies: Mapping[str, ProxySurface],
    profiles: Mapping[str, TemporalProfile],
    profile_map: Mapping[str, str | None] | None = None,
) -> ValidationReport:
    """Cross-reference the loaded tables.

    Reports country totals that no asset and no proxy weight can receive, and
    subsectors without a temporal profile (these use a uniform profile).
    ``profile_map`` maps subsector to profile id; by default a subsector uses
    the profile with its own name.
    """
    report = ValidationReport()
    groups = {(a.country, a.subsector) for a in registry if a.flags.emitting}
    for country, sub in sorted({(c, s) for c, s, _, _ in totals.rows}):
        has_proxy = sub in proxies and not proxies[sub].is_empty(country)
        if (country, sub) not in groups and not has_proxy:
            report.findings.append(
                Finding(
                    UNALLOCATABLE,
                    "warning",
                    f"{country}/{sub}: country total has no emitting asset and no proxy weight; "
                    "it will be held at country level",
                )
            )
    subsectors = sorted(
        {a.subsector for a in registry}
        | {s for _, s, _, _ in totals.rows}
        | set(profile_map or {})
    )
    profile_map = profile_map or {}
    for sub in subsectors:
        pid = profile_map.get(sub) or sub
        if pid not in profiles:
            report.findings.append(
                Finding(UNIFORM_FALLBACK, "warning", f"{sub}: no temporal profile; uniform months used")
            )
    return report
