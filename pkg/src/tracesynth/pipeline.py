"""End-to-end synthesis run.

Stage order: ingest, asset estimation, data-informed allocation, temporal
completion, remainder allocation, CO2e and co-pollutants, confidence and
uncertainty, rollups, export. Processing covers whole calendar years spanning
the configured window so annual country totals can be reconciled.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

from . import aggregation as agg
from .copollutants import (
    RatioTable,
    build_ratio_table,
    direct_pollutants,
    merge_reference,
    scale_pollutants,
)
from .config import RunConfig
from .disaggregation import (
    AllocationTarget,
    DefaultPools,
    adjust_emitting_count,
    allocate_country_to_assets,
    allocate_remainder,
    compute_remainder,
    derive_country_ef,
    emitting_ratio,
    impute_asset_defaults,
)
from .errors import ConservationError, InconsistencyError, InputValidationError, UnestimableError
from .ingest import (
    METHOD_DISAGGREGATED,
    AssetRegistry,
    CountryActivity,
    CountryTotalTable,
    ProxySurface,
    ReportedRecord,
    SubsectorSpec,
    TemporalProfile,
    ValidationReport,
    load_asset_registry,
    load_country_activity,
    load_country_totals,
    load_profiles,
    load_proxy_surface,
    load_reference,
    load_reported,
    load_subsectors,
    validate_inputs,
)
from .model import (
    Asset,
    ConfidenceLevel,
    EmissionRecord,
    Gas,
    GwpTable,
    Period,
    PollutantPath,
    Provenance,
    co2e_gas,
)
from .quality import (
    ConfidenceRubric,
    Evidence,
    assign_confidence,
    combine_additive,
    propagate_uncertainty,
)
from .temporal import (
    EqContext,
    FillFlag,
    Month,
    MonthlySeries,
    annual_to_monthly,
    average_by_month,
    extrapolate_months,
    impute_series,
    month_range,
    monthly_from_records,
    uniform_profile,
)

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

CONSERVATION_RTOL = 1e-6
# remainders this small relative to the total are rounding noise
REMAINDER_NOISE = 1e-9

GroupKey = tuple[str, str, Gas, int]  # country, subsector, gas, year

SOURCE_LEVEL_ASSET = "asset"
SOURCE_LEVEL_CELL = "cell"
SOURCE_LEVEL_COUNTRY = "country"

REPORTED_FLAGS = {FillFlag.OBSERVED, FillFlag.PROFILE_SPLIT, FillFlag.SPAN_APPORTIONED}
IMPUTED_FLAGS = {
    FillFlag.BACKFILLED,
    FillFlag.FORWARDFILLED,
    FillFlag.MONTH_EXTRAPOLATED,
    FillFlag.COUNTRY_AVG,
    FillFlag.GLOBAL_AVG,
}


@dataclass
class Inputs:
    subsectors: dict[str, SubsectorSpec]
    registry: AssetRegistry
    totals: CountryTotalTable
    proxies: dict[str, ProxySurface]
    profiles: dict[str, TemporalProfile]
    boundaries: agg.BoundaryIndex
    reported: list[ReportedRecord]
    activity: dict[tuple[str, str, int], CountryActivity]
    gwp: GwpTable
    rubric: ConfidenceRubric
    ratios: RatioTable | None
    validation: ValidationReport


def load_inputs(config: RunConfig) -> Inputs:
    """Stage 1: load and cross-validate every input table."""
    config.check_files()
    subsectors = load_subsectors(config.inputs["subsectors"])
    registry = load_asset_registry(config.inputs["assets"], subsectors, cf_max=config.cf_max)
    totals = load_country_totals(config.inputs["country_totals"])
    proxies = load_proxy_surface(config.inputs["proxy"])
    profiles = load_profiles(config.inputs["profiles"])
    boundaries = agg.load_boundaries(config.inputs["boundaries"])
    reported = load_reported(config.inputs["reported"], registry.assets) if "reported" in config.inputs else []
    activity = load_country_activity(config.inputs["country_activity"]) if "country_activity" in config.inputs else {}
    gwp = GwpTable.from_csv(config.inputs["gwp"]) if "gwp" in config.inputs else GwpTable.default()
    gwp.factor(Gas.CH4, config.horizon)
    rubric = ConfidenceRubric.from_csv(config.inputs["rubric"]) if "rubric" in config.inputs else ConfidenceRubric.default()
    ratios = None
    if "reference_ghg" in config.inputs and "reference_pollutants" in config.inputs:
        ghg = load_reference(config.inputs["reference_ghg"])
        pol = load_reference(config.inputs["reference_pollutants"])
        if "reference_ghg_secondary" in config.inputs:
            ghg = merge_reference(ghg, load_reference(config.inputs["reference_ghg_secondary"]))
        if "reference_pollutants_secondary" in config.inputs:
            pol = merge_reference(pol, load_reference(config.inputs["reference_pollutants_secondary"]))
        ratios = build_ratio_table(ghg, pol, gwp, config.horizon)
    unknown_subs = sorted({s for _, s, _, _ in totals.rows} - set(subsectors))
    if unknown_subs:
        raise InputValidationError(
            str(config.inputs["country_totals"]), [(0, f"unknown subsector(s) {', '.join(unknown_subs)}")]
        )
    profile_map = {s: spec.profile_id or s for s, spec in subsectors.items()}
    validation = validate_inputs(registry, totals, proxies, profiles, profile_map)
    return Inputs(
        subsectors, registry, totals, proxies, profiles, boundaries, reported, activity, gwp, rubric, ratios, validation
    )


@dataclass
class AuditRow:
    country: str
    subsector: str
    gas: Gas
    year: int
    country_total: float | None
    asset_sum: float
    remainder_sum: float
    effective_total: float

    @property
    def ok(self) -> bool:
        got = self.asset_sum + self.remainder_sum
        scale = max(abs(self.effective_total), 1e-9)
        return abs(got - self.effective_total) <= CONSERVATION_RTOL * scale

    def as_dict(self) -> dict:
        return {
            "country": self.country,
            "subsector": self.subsector,
            "gas": self.gas.value,
            "year": self.year,
            "country_total": self.country_total,
            "asset_sum": self.asset_sum,
            "remainder_sum": self.remainder_sum,
            "effective_total": self.effective_total,
            "ok": self.ok,
        }


@dataclass
class RunReport:
    diagnostics: dict[str, list[str]] = field(default_factory=dict)
    audit: list[AuditRow] = field(default_factory=list)
    level_audit: dict[str, dict[str, float]] = field(default_factory=dict)
    country_efs: dict[str, float] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)
    findings: list[str] = field(default_factory=list)
    quarantined: int = 0

    def note(self, stage: str, message: str) -> None:
        notes = self.diagnostics.setdefault(stage, [])
        if message not in notes:
            notes.append(message)

    @property
    def failing_keys(self) -> list[str]:
        keys = [f"{a.country}/{a.subsector}/{a.gas.value}/{a.year}" for a in self.audit if not a.ok]
        for gas, levels in sorted(self.level_audit.items()):
            ref = levels.get("sources", 0.0)
            for level, value in sorted(levels.items()):
                if abs(value - ref) > CONSERVATION_RTOL * max(abs(ref), 1e-9):
                    keys.append(f"{gas}@{level}")
        return keys

    @property
    def success(self) -> bool:
        return not self.failing_keys and self.quarantined == 0

    def to_json(self, config: RunConfig | None = None) -> str:
        doc = {
            "success": self.success,
            "failing_keys": self.failing_keys,
            "diagnostics": {k: v for k, v in sorted(self.diagnostics.items())},
            "findings": self.findings,
            "conservation_audit": [a.as_dict() for a in self.audit],
            "level_audit": self.level_audit,
            "country_emission_factors": dict(sorted(self.country_efs.items())),
            "quarantined": self.quarantined,
            "timing_s": self.timing,
            "config": config.to_metadata() if config else None,
        }
        return json.dumps(doc, sort_keys=True, indent=1)


@dataclass
class SynthesisResult:
    records: list[EmissionRecord]
    source_levels: dict[str, str]
    rollups: dict[str, agg.RollupResult]
    report: RunReport
    locations: dict[str, tuple[float, float]]
    config: RunConfig

    def export_rows(self, level: str) -> list[agg.ExportRow]:
        if level == "sources":
            return [agg.ExportRow.from_record(r, self.source_levels[r.source]) for r in self.records]
        return [agg.ExportRow.from_total(t) for t in self.rollups[level].rows]

    def annual_totals(self, level: str = agg.GADM0) -> dict[tuple[str, str, str, int], float]:
        acc: dict[tuple[str, str, str, int], list[float]] = {}
        for t in self.rollups[level].rows:
            acc.setdefault((t.unit_id, t.subsector, t.gas.value, t.period.start.year), []).append(t.tonnes)
        return {k: math.fsum(v) for k, v in sorted(acc.items())}


def _zero_series(asset_id: str, gas: Gas, months: Sequence[Month]) -> MonthlySeries:
    return MonthlySeries(asset_id, gas, {m: 0.0 for m in months}, {m: FillFlag.ZERO_FILLED for m in months})


def _pmap(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


class _Synthesizer:
    def __init__(self, config: RunConfig, inputs: Inputs) -> None:
        self.config = config
        self.inp = inputs
        self.report = RunReport()
        self.report.findings = [f"{f.kind}: {f.message}" for f in inputs.validation.findings]
        self.years = config.years
        self.months = month_range((self.years[0], 1), (self.years[-1], 12))
        self.first = self.months[0]
        self.horizon = config.horizon
        self.reported: dict[tuple[str, Gas], list[ReportedRecord]] = {}
        for r in inputs.reported:
            self.reported.setdefault((r.asset_id, r.gas), []).append(r)
        # (source, gas) -> monthly amounts, plus per-record metadata
        self.records: list[EmissionRecord] = []
        self.source_levels: dict[str, str] = {}
        self.series: dict[tuple[str, Gas], MonthlySeries] = {}
        self.asset_activity: dict[str, dict[Month, float]] = {}
        self.effective: dict[GroupKey, tuple[float | None, float]] = {}

    # -- helpers -------------------------------------------------------------

    def profile(self, subsector: str) -> list[float]:
        spec = self.inp.subsectors[subsector]
        pid = spec.profile_id or subsector
        prof = self.inp.profiles.get(pid)
        return list(prof.weights) if prof else uniform_profile()

    def conf(self, ef: str, activity: str) -> ConfidenceLevel:
        ef = ef if ef in ("asset", "regional", "country", "global") else "global"
        return assign_confidence(Evidence(ef, activity), self.inp.rubric)

    def gases_for(self, subsector: str) -> list[Gas]:
        gases = {g for (_, s, g, _) in self.inp.totals.rows if s == subsector}
        for a in self.inp.registry.by_subsector.get(subsector, []):
            gases |= {g for g in a.emission_factors if g.is_ghg}
            gases |= {g for (aid, g) in self.reported if aid == a.id}
        return sorted(gases, key=lambda g: g.value)

    def _emit_month(
        self,
        source: str,
        level: str,
        subsector: str,
        gas: Gas,
        month: Month,
        amount: float,
        provenance: Provenance,
        confidence: ConfidenceLevel,
        country: str,
        uncertainty: float | None = None,
        fuel: str | None = None,
    ) -> None:
        self.source_levels[source] = level
        self.records.append(
            EmissionRecord(
                source=source,
                subsector=subsector,
                gas=gas,
                period=Period.month(*month),
                amount=amount,
                provenance=provenance,
                confidence=confidence,
                uncertainty=uncertainty,
                country=country,
                fuel=fuel,
            )
        )

    def observed(self, asset: Asset, gas: Gas) -> tuple[dict[Month, float], dict[Month, FillFlag]]:
        recs = self.reported.get((asset.id, gas), [])
        return monthly_from_records(
            [(r.period, r.tonnes) for r in recs], profile=self.profile(asset.subsector)
        )

    def zero_implied(self, asset: Asset) -> Callable[[Month], bool]:
        def implied(m: Month) -> bool:
            if not asset.flags.emitting:
                return True
            p = Period.month(*m)
            if asset.operating_start and p.end <= asset.operating_start:
                return True
            if asset.operating_end and p.start >= asset.operating_end:
                return True
            return False

        return implied

    def complete_from_observations(
        self,
        asset: Asset,
        gas: Gas,
        eq: EqContext | None,
        country_avg: Mapping[Month, float] | None = None,
        global_avg: Mapping[Month, float] | None = None,
    ) -> MonthlySeries:
        """Impute one asset/gas series over the processing months."""
        obs, obs_flags = self.observed(asset, gas)
        obs = {m: v for m, v in obs.items() if m in set(self.months)}
        if eq is None and obs and country_avg is None and global_avg is None:
            # own data only: fill up to the last observation, then carry
            # same-month values into later months
            horizon = max(obs)
            span = month_range(self.first, horizon)
        else:
            span = self.months
        values = [obs.get(m) for m in span]
        flags = [obs_flags.get(m) for m in span]
        s = impute_series(
            values,
            start=self.first,
            asset_id=asset.id,
            gas=gas,
            zero_implied=self.zero_implied(asset),
            eq_context=eq,
            country_avg=[country_avg.get(m) for m in span] if country_avg else None,
            global_avg=[global_avg.get(m) for m in span] if global_avg else None,
            observed_flags=flags,
        )
        if span[-1] != self.months[-1]:
            s = extrapolate_months(s, self.months[-1])
            zero = self.zero_implied(asset)
            for m in s.months:
                if s.flags[m] is FillFlag.MONTH_EXTRAPOLATED and zero(m):
                    s.values[m] = 0.0
                    s.flags[m] = FillFlag.ZERO_FILLED
        return s

    def _eq_uncertainty(self, asset: Asset) -> float | None:
        u = asset.uncertainty
        if all(k in u for k in ("capacity", "capacity_factor", "ef")):
            return propagate_uncertainty([u["capacity"], u["capacity_factor"], u["ef"]])
        return None

    def emit_series(self, asset: Asset, series: MonthlySeries, factor_origin: str | None) -> None:
        """Turn a completed asset series into monthly records."""
        unc = self._eq_uncertainty(asset)
        for m in series.months:
            flag = series.flags[m]
            if flag in REPORTED_FLAGS:
                prov, conf, u = Provenance.REPORTED, self.conf("asset", "reported"), None
            elif flag is FillFlag.EQ_CONSTRAINED:
                if factor_origin:
                    prov, conf, u = Provenance.IMPUTED, self.conf(factor_origin, "imputed"), None
                else:
                    prov = Provenance.MODELED
                    conf = self.conf(asset.ef_granularity, asset.activity_source)
                    u = unc
            elif flag is FillFlag.ZERO_FILLED:
                prov, conf, u = Provenance.MODELED, self.conf(asset.ef_granularity, asset.activity_source), None
            elif flag is FillFlag.COUNTRY_AVG:
                prov, conf, u = Provenance.IMPUTED, self.conf("country", "imputed"), None
            elif flag is FillFlag.GLOBAL_AVG:
                prov, conf, u = Provenance.IMPUTED, self.conf("global", "imputed"), None
            else:
                prov, conf, u = Provenance.IMPUTED, self.conf(asset.ef_granularity, "imputed"), None
            self._emit_month(
                asset.id, SOURCE_LEVEL_ASSET, asset.subsector, series.gas, m, series.values[m],
                prov, conf, asset.country, u, asset.fuel,
            )

    def record_activity(self, asset: Asset, series: MonthlySeries, capacity: float | None, cf: float | None) -> None:
        if asset.id in self.asset_activity or capacity is None:
            return
        if series.capacity_factors:
            self.asset_activity[asset.id] = {
                m: capacity * cf_m for m, cf_m in series.capacity_factors.items() if not math.isnan(cf_m)
            }
        elif cf is not None:
            zero = self.zero_implied(asset)
            self.asset_activity[asset.id] = {m: 0.0 if zero(m) else capacity * cf for m in self.months}

    # -- stage 2/4: modeled subsectors -----------------------------------------

    def model_subsector(self, subsector: str) -> None:
        assets = self.inp.registry.by_subsector.get(subsector, [])
        gases = self.gases_for(subsector)
        pending: list[tuple[Asset, Gas]] = []
        first_pass: list[tuple[Asset, Gas, EqContext | None]] = []
        for a in assets:
            for g in gases:
                eq = None
                if a.has_factors and g in a.emission_factors:
                    eq = EqContext(a.capacity, a.capacity_factor, a.emission_factors[g])  # type: ignore[arg-type]
                has_obs = bool(self.reported.get((a.id, g)))
                if eq is not None or has_obs or not a.flags.emitting:
                    first_pass.append((a, g, eq))
                else:
                    pending.append((a, g))

        def run_first(item: tuple[Asset, Gas, EqContext | None]) -> MonthlySeries | UnestimableError:
            a, g, eq = item
            try:
                if eq is None and not self.reported.get((a.id, g)):
                    return impute_series(
                        [None] * len(self.months), start=self.first, asset_id=a.id, gas=g,
                        zero_implied=self.zero_implied(a),
                    )
                return self.complete_from_observations(a, g, eq)
            except UnestimableError as exc:
                return exc

        for (a, g, eq), s in zip(first_pass, _pmap(run_first, first_pass, self.config.jobs)):
            if isinstance(s, UnestimableError):
                self.report.note("imputation", f"{s}; asset left at zero")
                s = _zero_series(a.id, g, self.months)
            self.series[(a.id, g)] = s
            self.emit_series(a, s, None)
            if eq is not None:
                self.record_activity(a, s, a.capacity, a.capacity_factor)

        # country / global averages come from the assets completed above
        done = [(a, g) for a, g, _ in first_pass if a.flags.emitting]
        for a, g in pending:
            peers = [x for x in assets if x.id != a.id]
            try:
                imp = impute_asset_defaults(
                    a,
                    DefaultPools.from_assets(x for x in peers if x.country == a.country),
                    DefaultPools.from_assets(peers),
                    [g],
                )
            except UnestimableError:
                imp = None
            if imp is not None:
                full = imp.asset
                eq = EqContext(full.capacity, full.capacity_factor, full.emission_factors[g])  # type: ignore[arg-type]
                s = self.complete_from_observations(a, g, eq)
                origin = "global" if "global" in imp.imputed.values() else "country"
                self.series[(a.id, g)] = s
                self.emit_series(a, s, origin)
                self.record_activity(a, s, full.capacity, full.capacity_factor)
                self.report.note("imputation", f"{a.id}/{g.value}: factors imputed ({origin})")
                continue
            country_avg = average_by_month(
                self.series[(x.id, g)].values for x, gg in done if gg == g and x.country == a.country
            )
            global_avg = average_by_month(self.series[(x.id, g)].values for x, gg in done if gg == g)
            try:
                s = self.complete_from_observations(a, g, None, country_avg or None, global_avg or None)
            except UnestimableError as exc:
                self.report.note("imputation", f"{exc}; asset left at zero")
                s = _zero_series(a.id, g, self.months)
            self.series[(a.id, g)] = s
            self.emit_series(a, s, None)

    # -- stage 3: data-informed allocation ---------------------------------------

    def disaggregate_subsector(self, subsector: str) -> None:
        spec = self.inp.subsectors[subsector]
        assets = [a for a in self.inp.registry.by_subsector.get(subsector, []) if a.flags.emitting]
        by_country: dict[str, list[Asset]] = {}
        for a in assets:
            by_country.setdefault(a.country, []).append(a)
        gases = self.gases_for(subsector)
        profile = self.profile(subsector)

        reported_series: dict[tuple[str, Gas], MonthlySeries] = {}
        for a in assets:
            for g in gases:
                if self.reported.get((a.id, g)):
                    reported_series[(a.id, g)] = self.complete_from_observations(a, g, None)

        for country in sorted(by_country):
            group = sorted(by_country[country], key=lambda x: x.id)
            for g in gases:
                for year in self.years:
                    self._allocate_group(spec, country, group, g, year, reported_series, profile)

    def _proxies(self, spec: SubsectorSpec, country: str, group: list[Asset], year: int) -> tuple[dict[str, float], str]:
        """Activity proxy per asset: economic output, else capacity, else uniform."""
        activity = self.inp.activity.get((country, spec.id, year))
        per_asset_output = None
        if activity is not None:
            ratio = emitting_ratio({spec.id: spec.emitting_ratio} if spec.emitting_ratio is not None else {},
                                   spec.id, self.config.emitting_ratio if self.config.emitting_ratio is not None else 1.0)
            scraped = sum(1 for a in group if a.flags.scraped)
            count = adjust_emitting_count(activity.establishments, ratio, scraped)
            if count > 0:
                per_asset_output = activity.economic_output / count
        if all(a.output is not None or per_asset_output is not None for a in group):
            return {a.id: a.output if a.output is not None else per_asset_output for a in group}, "output"  # type: ignore[misc]
        if all(a.capacity is not None for a in group):
            return {a.id: a.capacity for a in group}, "capacity"  # type: ignore[misc]
        return {a.id: 1.0 for a in group}, "uniform"

    def _allocate_group(
        self,
        spec: SubsectorSpec,
        country: str,
        group: list[Asset],
        gas: Gas,
        year: int,
        reported_series: Mapping[tuple[str, Gas], MonthlySeries],
        profile: Sequence[float],
    ) -> None:
        months = [m for m in self.months if m[0] == year]
        total = self.inp.totals.get(country, spec.id, gas, year)
        proxies, proxy_kind = self._proxies(spec, country, group, year)
        targets = []
        for a in group:
            rs = reported_series.get((a.id, gas))
            reported = rs.total(year) if rs is not None else None
            targets.append(AllocationTarget(a.id, proxies[a.id], reported))
        reported_sum = math.fsum(t.reported for t in targets if t.reported is not None)
        key = f"{country}/{spec.id}/{gas.value}/{year}"

        for a in group:
            rs = reported_series.get((a.id, gas))
            if rs is not None:
                sub = MonthlySeries(a.id, gas, {m: rs.values[m] for m in months}, {m: rs.flags[m] for m in months})
                self.emit_series(a, sub, None)

        pool_assets = [a for a, t in zip(group, targets) if t.reported is None]
        if total is not None and reported_sum < total and pool_assets:
            result = allocate_country_to_assets(total, targets, subsector=spec.id, gas=gas,
                                                period=Period.year(year), country=country)
            if result.diagnostics.uniform_fallback:
                self.report.note("allocation", f"{key}: zero proxies, uniform split")
            pool = total - reported_sum
            if proxy_kind != "uniform":
                act = math.fsum(proxies[a.id] for a in pool_assets)
                try:
                    self.report.country_efs[key] = derive_country_ef(pool, act)
                except InconsistencyError as exc:
                    self.report.note("allocation", f"{key}: {exc}")
            ef_level = "country"
            activity = "imputed" if proxy_kind == "uniform" or result.diagnostics.uniform_fallback else "proxy"
            conf = self.conf(ef_level, activity)
            shares = result.shares
            for a in pool_assets:
                parts = annual_to_monthly(shares[a.id], profile)
                for m, v in zip(months, parts):
                    self._emit_month(a.id, SOURCE_LEVEL_ASSET, spec.id, gas, m, v,
                                     Provenance.DISAGGREGATED, conf, country, None, a.fuel)
            return

        # Reported emissions meet the country total (or there is no total):
        # the other assets get default factors from their peers.
        if total is not None and pool_assets:
            self.report.note("allocation", f"{key}: reported assets ({reported_sum:.6g} t) meet the country total")
        peers_all = self.inp.registry.by_subsector.get(spec.id, [])
        for a in pool_assets:
            peers = [x for x in peers_all if x.id != a.id]
            try:
                imp = impute_asset_defaults(
                    a,
                    DefaultPools.from_assets(x for x in peers if x.country == country),
                    DefaultPools.from_assets(peers),
                    [gas],
                )
            except UnestimableError as exc:
                self.report.note("allocation", f"{key}: {exc}; asset left at zero")
                for m in months:
                    self._emit_month(a.id, SOURCE_LEVEL_ASSET, spec.id, gas, m, 0.0, Provenance.IMPUTED,
                                     self.conf("global", "imputed"), country, None, a.fuel)
                continue
            full = imp.asset
            origin = "global" if "global" in imp.imputed.values() else ("country" if imp.imputed else a.ef_granularity)
            eq = EqContext(full.capacity, full.capacity_factor, full.emission_factors[gas])  # type: ignore[arg-type]
            zero = self.zero_implied(a)
            value = eq.monthly_emissions()
            conf = self.conf(origin, "imputed" if imp.imputed else a.activity_source)
            prov = Provenance.IMPUTED if imp.imputed else Provenance.MODELED
            for m in months:
                self._emit_month(a.id, SOURCE_LEVEL_ASSET, spec.id, gas, m, 0.0 if zero(m) else value,
                                 prov, conf, country, None, a.fuel)

    # -- stage 5: remainders -----------------------------------------------------

    def allocate_remainders(self) -> None:
        sums: dict[GroupKey, list[float]] = {}
        for r in self.records:
            sums.setdefault((r.country or "", r.subsector, r.gas, r.period.start.year), []).append(r.amount)
        keys = sorted(set(sums) | set(self.inp.totals.rows), key=lambda k: (k[0], k[1], k[2].value, k[3]))
        for key in keys:
            country, sub, gas, year = key
            if year not in self.years:
                continue
            asset_sum = math.fsum(sums.get(key, []))
            total = self.inp.totals.rows.get(key)
            if total is None:
                self.effective[key] = (None, asset_sum)
                continue
            effective, remainder = compute_remainder(total, asset_sum)
            if 0 < remainder <= REMAINDER_NOISE * total:
                effective, remainder = asset_sum, 0.0
            self.effective[key] = (total, effective)
            if remainder == 0:
                continue
            surface = self.inp.proxies.get(sub)
            cells = surface.for_country(country) if surface else []
            recs, parked = allocate_remainder(remainder, cells, country=country, subsector=sub, gas=gas,
                                              period=Period.year(year))
            level = SOURCE_LEVEL_COUNTRY if parked else SOURCE_LEVEL_CELL
            if parked:
                self.report.note("remainder", f"{country}/{sub}/{gas.value}/{year}: proxy empty, "
                                 f"{remainder:.6g} t held at country level")
            conf = self.conf("country", "proxy") if not parked else self.conf("global", "proxy")
            unc = self.inp.totals.uncertainty.get(key)
            profile = self.profile(sub)
            months = [m for m in self.months if m[0] == year]
            for rec in recs:
                for m, v in zip(months, annual_to_monthly(rec.amount, profile)):
                    self._emit_month(rec.source, level, sub, gas, m, v, Provenance.REMAINDER, conf, country, unc)

    # -- stage 6: CO2e and pollutants ---------------------------------------------

    def derive_co2e(self) -> list[EmissionRecord]:
        out_gas = co2e_gas(self.horizon)
        groups: dict[tuple, list[EmissionRecord]] = {}
        for r in self.records:
            if r.gas.is_ghg:
                groups.setdefault((r.source, r.subsector, r.period.start), []).append(r)
        out = []
        for key in sorted(groups):
            recs = groups[key]
            weighted = [r.amount * self.inp.gwp.factor(r.gas, self.horizon) for r in recs]
            amount = math.fsum(weighted)
            provs = {r.provenance for r in recs}
            prov = provs.pop() if len(provs) == 1 else Provenance.MODELED
            if all(r.uncertainty is not None for r in recs):
                unc = combine_additive(weighted, [r.uncertainty for r in recs])  # type: ignore[misc]
            else:
                unc = None
            first = recs[0]
            out.append(
                EmissionRecord(first.source, first.subsector, out_gas, first.period, amount, prov,
                               min(r.confidence for r in recs), unc, first.country, first.fuel)
            )
        return out

    def pollutants(self, co2e_records: list[EmissionRecord]) -> list[EmissionRecord]:
        out: list[EmissionRecord] = []
        wanted = self.config.pollutants
        assets = self.inp.registry.assets
        ratio_recs: list[EmissionRecord] = []
        for r in co2e_records:
            if self.source_levels.get(r.source) != SOURCE_LEVEL_ASSET:
                continue
            spec = self.inp.subsectors[r.subsector].subsector
            asset = assets[r.source]
            direct_gases = [g for g in asset.emission_factors if g.is_pollutant and spec.path_for(g) is PollutantPath.DIRECT]
            if direct_gases:
                activity = self.asset_activity.get(asset.id)
                m = (r.period.start.year, r.period.start.month)
                for g in sorted(direct_gases, key=lambda x: x.value):
                    if wanted and g not in wanted:
                        continue
                    if activity is None or m not in activity:
                        self.report.note("pollutants", f"{asset.id}: no activity for direct {g.value}")
                        continue
                    rec = direct_pollutants(spec, g, activity[m], asset.emission_factors[g], source=asset.id,
                                            period=r.period, country=asset.country, confidence=r.confidence)
                    out.append(rec)
            if any(p is PollutantPath.COPOLLUTANT for p in spec.pollutant_paths.values()):
                ratio_recs.append(r)
        if self.inp.ratios is not None and ratio_recs:
            table = self.inp.ratios
            available = sorted({g for (_, g, _, _) in table.exact}, key=lambda g: g.value)
            for r in ratio_recs:
                spec = self.inp.subsectors[r.subsector].subsector
                gases = [g for g in available if spec.path_for(g) is PollutantPath.COPOLLUTANT
                         and (not wanted or g in wanted)]
                recs, notes = scale_pollutants([r], table, gases)
                out.extend(recs)
                for n in notes:
                    self.report.note("pollutants", n)
        return out

    # -- driver -------------------------------------------------------------------

    def run(self) -> SynthesisResult:
        timer = time.perf_counter
        t0 = timer()
        for sub, spec in self.inp.subsectors.items():
            if spec.method == METHOD_DISAGGREGATED:
                self.disaggregate_subsector(sub)
            else:
                self.model_subsector(sub)
        t1 = timer()
        self.allocate_remainders()
        t2 = timer()
        self._audit()
        co2e = self.derive_co2e()
        pol = self.pollutants(co2e)
        self.records.extend(co2e)
        self.records.extend(pol)
        t3 = timer()
        self.records.sort(key=lambda r: (r.source, r.subsector, r.gas.value, r.period.start, r.provenance.value))
        rollups = {
            level: agg.rollup(self.records, level, self.inp.boundaries) for level in agg.LEVELS
        }
        self.report.quarantined = len(rollups[agg.GADM0].quarantined)
        self._level_audit(rollups)
        t4 = timer()
        self.report.timing = {
            "assets_and_allocation": t1 - t0,
            "remainder": t2 - t1,
            "pollutants": t3 - t2,
            "rollups": t4 - t3,
        }
        locations = {a.id: a.location for a in self.inp.registry if a.location is not None}
        return SynthesisResult(self.records, self.source_levels, rollups, self.report, locations, self.config)

    def _audit(self) -> None:
        asset_sums: dict[GroupKey, list[float]] = {}
        rem_sums: dict[GroupKey, list[float]] = {}
        for r in self.records:
            key = (r.country or "", r.subsector, r.gas, r.period.start.year)
            target = rem_sums if r.provenance is Provenance.REMAINDER else asset_sums
            target.setdefault(key, []).append(r.amount)
        for key in sorted(self.effective, key=lambda k: (k[0], k[1], k[2].value, k[3])):
            total, effective = self.effective[key]
            self.report.audit.append(
                AuditRow(key[0], key[1], key[2], key[3], total,
                         math.fsum(asset_sums.get(key, [])), math.fsum(rem_sums.get(key, [])), effective)
            )

    def _level_audit(self, rollups: Mapping[str, agg.RollupResult]) -> None:
        per_gas: dict[str, dict[str, list[float]]] = {}
        for r in self.records:
            per_gas.setdefault(r.gas.value, {}).setdefault("sources", []).append(r.amount)
        for level in (agg.GADM0, agg.GADM1, agg.GADM2):
            for t in rollups[level].rows:
                per_gas.setdefault(t.gas.value, {}).setdefault(level, []).append(t.tonnes)
        self.report.level_audit = {
            g: {lvl: math.fsum(v) for lvl, v in sorted(d.items())} for g, d in sorted(per_gas.items())
        }


def synthesize(config: RunConfig, inputs: Inputs | None = None, *, check: bool = True) -> SynthesisResult:
    """Run the full synthesis.

    Raises:
        ConservationError: the audit found keys whose asset and remainder
            records do not add up to the effective total (only when ``check``).
    """
    started = time.perf_counter()
    inputs = inputs or load_inputs(config)
    result = _Synthesizer(config, inputs).run()
    result.report.timing["total"] = time.perf_counter() - started
    if check and not result.report.success:
        raise ConservationError(
            f"conservation audit failed for {len(result.report.failing_keys)} key(s)",
            result.report.failing_keys,
        )
    return result


OUTPUT_LEVELS = ("sources",) + agg.LEVELS


def write_outputs(result: SynthesisResult, out_dir: str | Path, formats: Iterable[str] | None = None) -> list[Path]:
    """Export every level in every requested format plus the run report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = result.config.to_metadata()
    paths = []
    for fmt in formats or result.config.formats:
        for level in OUTPUT_LEVELS:
            name = f"inventory_{level}.{'csv' if fmt == 'csv' else 'geojson'}"
            paths.append(
                agg.export_inventory(
                    result.export_rows(level),
                    out / name,
                    fmt,
                    metadata=meta,
                    locations=result.locations if level == "sources" else None,
                    integral=result.config.integral,
                )
            )
    report = out / "run_report.json"
    report.write_text(result.report.to_json(result.config) + "\n", encoding="utf-8")
    paths.append(report)
    return paths


@dataclass
class ChangeReport:
    threshold: float
    changed: list[tuple[tuple[str, str, str, int], float | None, float | None]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.changed)

    def rows(self) -> list[dict]:
        return [
            {"unit_id": k[0], "subsector": k[1], "gas": k[2], "year": k[3], "previous": old, "current": new}
            for k, old, new in self.changed
        ]


def diff_totals(
    previous: Mapping[tuple[str, str, str, int], float],
    current: Mapping[tuple[str, str, str, int], float],
    threshold: float,
) -> ChangeReport:
    """Keys whose totals moved by more than ``threshold`` (relative)."""
    report = ChangeReport(threshold)
    for key in sorted(set(previous) | set(current)):
        old, new = previous.get(key), current.get(key)
        if old is None or new is None:
            report.changed.append((key, old, new))
            continue
        if abs(new - old) > threshold * max(abs(old), 1e-12):
            report.changed.append((key, old, new))
    return report


def iterate(previous: SynthesisResult, config: RunConfig, threshold: float | None = None) -> tuple[SynthesisResult, ChangeReport]:
    """Recompute from scratch with new inputs and list country totals that moved."""
    current = synthesize(config)
    th = config.change_threshold if threshold is None else threshold
    return current, diff_totals(previous.annual_totals(), current.annual_totals(), th)


def totals_from_export(path: str | Path) -> dict[tuple[str, str, str, int], float]:
    """Annual per-(unit, subsector, gas) totals from an exported rollup file."""
    acc: dict[tuple[str, str, str, int], list[float]] = {}
    for r in agg.load_inventory(path):
        acc.setdefault((r.unit_id, r.subsector, r.gas, r.period_start.year), []).append(r.tonnes)
    return {k: math.fsum(v) for k, v in sorted(acc.items())}
