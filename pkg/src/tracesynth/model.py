"""Domain vocabulary and the activity / emissions equations.

Activity is capacity times capacity factor; emissions are activity times an
emission factor. Every other module composes these two products, or runs
them backwards to recover a missing factor.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, DomainError, InconsistencyError, UnitError


class Gas(str, enum.Enum):
    CO2 = "CO2"
    CH4 = "CH4"
    N2O = "N2O"
    CO2E_100 = "CO2e100"
    CO2E_20 = "CO2e20"
    CO = "CO"
    OC = "OC"
    BC = "BC"
    VOC = "VOC"
    PM25 = "PM2.5"
    NOX = "NOx"
    NH3 = "NH3"
    SO2 = "SO2"

    @property
    def is_ghg(self) -> bool:
        return self in GREENHOUSE_GASES

    @property
    def is_derived(self) -> bool:
        return self in (Gas.CO2E_100, Gas.CO2E_20)

    @property
    def is_pollutant(self) -> bool:
        return not (self.is_ghg or self.is_derived)

    @classmethod
    def parse(cls, code: str) -> "Gas":
        try:
            return cls(code.strip())
        except ValueError:
            raise DomainError(f"unknown gas code {code!r}") from None

    def __str__(self) -> str:
        return self.value


GREENHOUSE_GASES = (Gas.CO2, Gas.CH4, Gas.N2O)
POLLUTANTS = tuple(g for g in Gas if g.is_pollutant)


def co2e_gas(horizon: int) -> Gas:
    """Derived gas code for a GWP horizon in years."""
    if horizon == 100:
        return Gas.CO2E_100
    if horizon == 20:
        return Gas.CO2E_20
    raise ConfigError(f"unsupported GWP horizon {horizon}")


class ConfidenceLevel(enum.IntEnum):
    VERY_LOW = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3
    VERY_HIGH = 4

    @classmethod
    def parse(cls, text: str) -> "ConfidenceLevel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise DomainError(f"unknown confidence level {text!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()

    def __str__(self) -> str:
        return self.label


class Provenance(str, enum.Enum):
    REPORTED = "reported"
    MODELED = "modeled"
    DISAGGREGATED = "disaggregated"
    REMAINDER = "remainder"
    IMPUTED = "imputed"

    def __str__(self) -> str:
        return self.value


class Granularity(str, enum.Enum):
    MONTHLY = "monthly"
    QUARTERLY = "quarterly"
    ANNUAL = "annual"
    SPAN = "span"

    def __str__(self) -> str:
        return self.value


class PollutantPath(str, enum.Enum):
    DIRECT = "direct"
    COPOLLUTANT = "copollutant"


# Subsectors whose non-GHG emissions come from pollutant emission factors
# rather than country-level co-pollutant ratios.
DIRECT_PATH_SUBSECTORS = frozenset(
    {
        "electricity-generation",
        "oil-and-gas-refining",
        "road-transportation",
        "domestic-shipping",
        "international-shipping",
        "residential-onsite-fuel-usage",
        "non-residential-onsite-fuel-usage",
        "petrochemicals-steam-cracking",
        "cropland-fires",
    }
)


@dataclass(frozen=True)
class Period:
    """Half-open date interval ``[start, end)``."""

    start: date
    end: date
    granularity: Granularity = Granularity.SPAN

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise DomainError(f"period start {self.start} is not before end {self.end}")

    @classmethod
    def month(cls, year: int, month: int) -> "Period":
        nxt = date(year + 1, 1, 1) if month == 12 else date(year, month + 1, 1)
        return cls(date(year, month, 1), nxt, Granularity.MONTHLY)

    @classmethod
    def quarter(cls, year: int, quarter: int) -> "Period":
        if quarter not in (1, 2, 3, 4):
            raise DomainError(f"quarter must be 1-4, got {quarter}")
        first = 3 * (quarter - 1) + 1
        end = date(year + 1, 1, 1) if quarter == 4 else date(year, first + 3, 1)
        return cls(date(year, first, 1), end, Granularity.QUARTERLY)

    @classmethod
    def year(cls, year: int) -> "Period":
        return cls(date(year, 1, 1), date(year + 1, 1, 1), Granularity.ANNUAL)

    @property
    def days(self) -> int:
        return (self.end - self.start).days


@dataclass(frozen=True)
class Subsector:
    id: str
    ipcc_sector: str = ""
    pollutant_paths: Mapping[Gas, PollutantPath] = field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = [g for g in POLLUTANTS if g not in self.pollutant_paths]
        if missing:
            raise DomainError(
                f"subsector {self.id!r} has no pollutant path for "
                + ", ".join(g.value for g in missing)
            )

    @classmethod
    def with_path(
        cls, id: str, ipcc_sector: str = "", path: PollutantPath | None = None
    ) -> "Subsector":
        """Build a subsector using one path for every pollutant.

        Without an explicit ``path`` the subsector is direct when it is one of
        :data:`DIRECT_PATH_SUBSECTORS` and co-pollutant otherwise.
        """
        if path is None:
            path = (
                PollutantPath.DIRECT
                if id in DIRECT_PATH_SUBSECTORS
                else PollutantPath.COPOLLUTANT
            )
        return cls(id, ipcc_sector, {g: path for g in POLLUTANTS})

    def path_for(self, gas: Gas) -> PollutantPath:
        return self.pollutant_paths[gas]


@dataclass(frozen=True)
class AssetFlags:
    scraped: bool = False
    emitting: bool = True
    has_reported_emissions: bool = False


@dataclass(frozen=True)
class Asset:
    """One emitting facility.

    ``capacity`` is expressed per month in subsector-specific units.
    ``capacity`` and ``capacity_factor`` may be ``None`` when unknown; missing
    emission factors are simply absent from ``emission_factors``.
    """

    id: str
    subsector: str
    country: str
    capacity: float | None = None
    capacity_factor: float | None = None
    emission_factors: Mapping[Gas, float] = field(default_factory=dict)
    location: tuple[float, float] | None = None
    flags: AssetFlags = AssetFlags()
    output: float | None = None
    fuel: str | None = None
    intensive: bool = False
    operating_start: date | None = None
    operating_end: date | None = None
    ef_granularity: str = "asset"
    activity_source: str = "reported"
    uncertainty: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capacity is not None and self.capacity < 0:
            raise DomainError(f"asset {self.id}: negative capacity {self.capacity}")
        if self.capacity_factor is not None and self.capacity_factor < 0:
            raise DomainError(f"asset {self.id}: negative capacity factor")
        for gas, ef in self.emission_factors.items():
            if ef < 0:
                raise DomainError(f"asset {self.id}: negative emission factor for {gas}")
        if self.output is not None and self.output < 0:
            raise DomainError(f"asset {self.id}: negative output")
        if self.location is not None:
            lat, lon = self.location
            if not -90.0 <= lat <= 90.0:
                raise DomainError(f"asset {self.id}: latitude {lat} out of range")
            if not -180.0 <= lon <= 180.0:
                raise DomainError(f"asset {self.id}: longitude {lon} out of range")

    def check_capacity_factor(self, cf_max: float) -> None:
        if self.capacity_factor is not None and self.capacity_factor > cf_max:
            raise DomainError(
                f"asset {self.id}: capacity factor {self.capacity_factor} exceeds {cf_max}"
            )

    @property
    def has_factors(self) -> bool:
        return self.capacity is not None and self.capacity_factor is not None


@dataclass(frozen=True)
class EmissionRecord:
    source: str
    subsector: str
    gas: Gas
    period: Period
    amount: float
    provenance: Provenance
    confidence: ConfidenceLevel = ConfidenceLevel.MEDIUM
    uncertainty: float | None = None
    country: str | None = None
    fuel: str | None = None

    def __post_init__(self) -> None:
        if not self.amount >= 0:
            raise DomainError(f"record for {self.source}: amount {self.amount} is negative")
        if self.uncertainty is not None and self.uncertainty < 0:
            raise DomainError(f"record for {self.source}: negative uncertainty")


# CF bounds: strict nameplate, or relaxed to tolerate reported over-generation.
CF_BOUNDS = {"strict": 1.0, "relaxed": 1.5}


def _check_nonnegative(**values: float) -> None:
    for name, value in values.items():
        if value is None or math.isnan(value) or value < 0:
            raise DomainError(f"{name} must be non-negative, got {value}")


def compute_activity(capacity: float, capacity_factor: float) -> float:
    """Activity realised by an asset: ``capacity * capacity_factor``."""
    _check_nonnegative(capacity=capacity, capacity_factor=capacity_factor)
    return capacity * capacity_factor


def _denominator(ef_unit: str) -> str:
    if "/" not in ef_unit:
        raise UnitError(f"emission factor unit {ef_unit!r} has no activity denominator")
    return ef_unit.split("/", 1)[1].strip()


def compute_emissions(
    activity: float,
    emission_factor: float,
    *,
    activity_unit: str | None = None,
    ef_unit: str | None = None,
) -> float:
    """Emitted mass in tonnes: ``activity * emission_factor``.

    When both units are given, the emission factor's denominator (the part
    after ``/`` in e.g. ``"t/MWh"``) must equal the activity unit.
    """
    _check_nonnegative(activity=activity, emission_factor=emission_factor)
    if activity_unit is not None and ef_unit is not None:
        if _denominator(ef_unit) != activity_unit.strip():
            raise UnitError(
                f"emission factor {ef_unit!r} does not apply to activity in {activity_unit!r}"
            )
    return activity * emission_factor


def decompose_emissions(
    total: float,
    *,
    capacity: float | None = None,
    capacity_factor: float | None = None,
    emission_factor: float | None = None,
) -> float:
    """Recover the one factor of ``total = C * CF * EF`` that is not given.

    Exactly two of the keyword factors must be supplied. A zero known factor is
    only consistent with zero emissions, in which case the missing factor is
    reported as zero.
    """
    known = {
        "capacity": capacity,
        "capacity_factor": capacity_factor,
        "emission_factor": emission_factor,
    }
    given = {k: v for k, v in known.items() if v is not None}
    if len(given) != 2:
        raise DomainError("exactly two of capacity, capacity_factor, emission_factor are required")
    _check_nonnegative(total=total, **given)
    a, b = given.values()
    if a == 0 or b == 0:
        if total > 0:
            zero = [k for k, v in given.items() if v == 0]
            raise InconsistencyError(
                f"{', '.join(zero)} is zero but emissions are {total}"
            )
        return 0.0
    return total / (a * b)


@dataclass(frozen=True)
class GwpTable:
    """Global-warming-potential factors keyed by ``(gas, horizon_years)``."""

    entries: Mapping[tuple[Gas, int], float]
    source: str = ""

    def __post_init__(self) -> None:
        for (gas, horizon), factor in self.entries.items():
            if not gas.is_ghg:
                raise ConfigError(f"GWP entry for non-GHG {gas}")
            if not factor > 0:
                raise ConfigError(f"GWP for {gas}/{horizon} must be positive")
            if gas is Gas.CO2 and factor != 1:
                raise ConfigError(f"GWP of CO2 must be 1, got {factor} for horizon {horizon}")

    def factor(self, gas: Gas, horizon: int) -> float:
        if gas is Gas.CO2:
            return 1.0
        try:
            return self.entries[(gas, horizon)]
        except KeyError:
            raise ConfigError(f"no GWP entry for {gas} at {horizon}-yr horizon") from None

    @property
    def horizons(self) -> set[int]:
        return {h for _, h in self.entries}

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping[str, str]], source: str = "") -> "GwpTable":
        entries: dict[tuple[Gas, int], float] = {}
        for row in rows:
            key = (Gas.parse(row["gas"]), int(row["horizon"]))
            if key in entries:
                raise ConfigError(f"duplicate GWP entry {key[0]}/{key[1]}")
            entries[key] = float(row["gwp"])
        return cls(entries, source)

    @classmethod
    def from_csv(cls, path: str | Path) -> "GwpTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(_skip_comments(fh))]
        return cls.from_rows(rows, source=str(path))

    @classmethod
    def default(cls) -> "GwpTable":
        """IPCC AR5 100-yr and 20-yr factors (no climate-carbon feedback)."""
        text = resources.files("tracesynth.data").joinpath("gwp.csv").read_text("utf-8")
        rows = list(csv.DictReader(_skip_comments(text.splitlines())))
        return cls.from_rows(rows, source="IPCC AR5 WG1 Table 8.7")


def _skip_comments(lines: Iterable[str]) -> Iterable[str]:
    return (line for line in lines if not line.startswith("#"))


def to_co2e(amounts: Mapping[Gas, float], gwp: GwpTable, horizon: int) -> float:
    """GWP-weighted sum of the greenhouse gases in ``amounts``.

    Pollutants and already-derived CO2e entries carry no GWP and are skipped.
    """
    total = 0.0
    for gas, amount in amounts.items():
        if not gas.is_ghg:
            continue
        total += amount * gwp.factor(gas, horizon)
    return total
