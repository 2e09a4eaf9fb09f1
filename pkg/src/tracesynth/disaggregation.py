"""Gap-filling procedures that move mass between resolutions.

Three procedures live here: data-informed allocation of a country total to
its assets, spatial allocation of the country remainder over a proxy
surface, and implicit estimation by subtracting covered categories from a
broader total.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import DomainError, InconsistencyError, UnestimableError
from .model import (
    Asset,
    ConfidenceLevel,
    EmissionRecord,
    Gas,
    Period,
    Provenance,
)

log = logging.getLogger(__name__)

ASSETS_EXCEED_TOTAL = "assets_exceed_total"
REMAINDER_DISTRIBUTED = "remainder_distributed"


@dataclass(frozen=True)
class AllocationTarget:
    """An asset taking part in a country-to-asset allocation.

    ``proxy`` is the activity approximation used for shares; ``reported`` is
    the asset's own emissions total when it has one.
    """

    asset_id: str
    proxy: float = 0.0
    reported: float | None = None


@dataclass
class AllocationDiagnostics:
    country_total: float
    asset_sum: float
    remainder: float
    rule: str
    uniform_fallback: bool = False
    notes: list[str] = field(default_factory=list)


@dataclass
class AllocationResult:
    asset_records: list[EmissionRecord]
    remainder_records: list[EmissionRecord]
    diagnostics: AllocationDiagnostics

    @property
    def shares(self) -> dict[str, float]:
        return {r.source: r.amount for r in self.asset_records}

    @property
    def effective_total(self) -> float:
        return math.fsum(r.amount for r in self.asset_records) + math.fsum(
            r.amount for r in self.remainder_records
        )


def adjust_emitting_count(total_establishments: int, ratio: float, scraped_emitting: int) -> int:
    """Estimated number of emitting establishments in a country.

    The establishment count is scaled by the global emitting ratio; a larger
    count of scraped emitting assets takes precedence.
    """
    if not 0.0 <= ratio <= 1.0:
        raise DomainError(f"emitting ratio {ratio} outside [0, 1]")
    if total_establishments < 0 or scraped_emitting < 0:
        raise DomainError("establishment counts must be non-negative")
    return max(round(total_establishments * ratio), scraped_emitting)


def emitting_ratio(per_subsector: Mapping[str, float], subsector: str, default: float | None) -> float:
    """Ratio for ``subsector``, falling back to the global ``default``."""
    ratio = per_subsector.get(subsector, default)
    if ratio is None:
        raise DomainError(f"no emitting ratio for {subsector!r} and no global default")
    if not 0.0 <= ratio <= 1.0:
        raise DomainError(f"emitting ratio {ratio} outside [0, 1]")
    return ratio


def derive_country_ef(total_emissions: float, total_activity: float) -> float:
    """Country emission factor as total emissions over total activity.

    Raises:
        InconsistencyError: activity is zero while emissions are not, so no
            factor exists and callers should fall back to default imputation.
    """
    if total_emissions < 0 or total_activity < 0:
        raise DomainError("emissions and activity must be non-negative")
    if total_activity == 0:
        if total_emissions == 0:
            return 0.0
        raise InconsistencyError(
            f"{total_emissions} t over zero activity has no emission factor"
        )
    return total_emissions / total_activity


def proportional_shares(total: float, weights: Sequence[float]) -> list[float]:
    """Split ``total`` by ``weights``.

    The largest share (first one on ties) absorbs the rounding residual, so
    no share can be pushed below zero.
    """
    wsum = math.fsum(weights)
    if wsum <= 0:
        raise DomainError("weights sum to zero")
    shares = [total * w / wsum for w in weights]
    residual = total - math.fsum(shares)
    if residual:
        j = max(range(len(shares)), key=lambda i: (shares[i], -i))
        shares[j] = max(0.0, shares[j] + residual)
    return shares


def allocate_country_to_assets(
    country_total: float,
    targets: Sequence[AllocationTarget],
    *,
    subsector: str = "",
    gas: Gas = Gas.CO2,
    period: Period | None = None,
    country: str | None = None,
) -> AllocationResult:
    """Distribute a country total over assets by their activity proxies.

    Assets with reported emissions keep them and leave the pool, which shrinks
    by their sum (floored at zero). When reported emissions reach or exceed
    the country total they replace it and the remaining assets get nothing
    from the pool. A zero proxy sum with a positive pool splits uniformly.
    """
    if country_total < 0:
        raise DomainError(f"country total {country_total} is negative")
    if any(t.proxy < 0 or (t.reported is not None and t.reported < 0) for t in targets):
        raise DomainError("proxies and reported emissions must be non-negative")
    ids = [t.asset_id for t in targets]
    if len(set(ids)) != len(ids):
        raise DomainError("duplicate asset in allocation")
    period = period or Period.year(2021)
    ordered = sorted(targets, key=lambda t: t.asset_id)
    reported = [t for t in ordered if t.reported is not None]
    pool_assets = [t for t in ordered if t.reported is None]
    reported_sum = math.fsum(t.reported for t in reported)  # type: ignore[misc]

    diag = AllocationDiagnostics(country_total, 0.0, 0.0, REMAINDER_DISTRIBUTED)
    amounts: dict[str, tuple[float, Provenance, ConfidenceLevel]] = {
        t.asset_id: (t.reported, Provenance.REPORTED, ConfidenceLevel.HIGH)  # type: ignore[misc]
        for t in reported
    }
    pool = max(0.0, country_total - reported_sum)
    if reported_sum >= country_total and reported:
        diag.rule = ASSETS_EXCEED_TOTAL
        diag.notes.append("reported asset emissions replace the country total")
        for t in pool_assets:
            amounts[t.asset_id] = (0.0, Provenance.DISAGGREGATED, ConfidenceLevel.LOW)
    elif pool_assets:
        weights = [t.proxy for t in pool_assets]
        if math.fsum(weights) <= 0:
            if pool > 0:
                diag.uniform_fallback = True
                diag.notes.append("all proxies zero; uniform split")
            weights = [1.0] * len(pool_assets)
        conf = ConfidenceLevel.LOW if diag.uniform_fallback else ConfidenceLevel.MEDIUM
        for t, share in zip(pool_assets, proportional_shares(pool, weights)):
            amounts[t.asset_id] = (share, Provenance.DISAGGREGATED, conf)
        pool = 0.0

    asset_records = [
        EmissionRecord(
            source=aid,
            subsector=subsector,
            gas=gas,
            period=period,
            amount=amt,
            provenance=prov,
            confidence=conf,
            country=country,
        )
        for aid, (amt, prov, conf) in sorted(amounts.items())
    ]
    diag.asset_sum = math.fsum(r.amount for r in asset_records)
    remainder_records = []
    if pool > 0:
        # no asset can take the pool; it stays at country level
        diag.remainder = pool
        diag.notes.append("no unreported assets; pool left as remainder")
        remainder_records.append(
            EmissionRecord(
                source=country or "",
                subsector=subsector,
                gas=gas,
                period=period,
                amount=pool,
                provenance=Provenance.REMAINDER,
                confidence=ConfidenceLevel.LOW,
                country=country,
            )
        )
    return AllocationResult(asset_records, remainder_records, diag)


@dataclass(frozen=True)
class DefaultPools:
    """Values of other assets used to impute missing factors."""

    emission_factors: Mapping[Gas, Sequence[float]] = field(default_factory=dict)
    capacity_factors: Sequence[float] = ()
    capacities: Sequence[float] = ()

    @classmethod
    def from_assets(cls, assets: Iterable[Asset]) -> "DefaultPools":
        efs: dict[Gas, list[float]] = {}
        cfs: list[float] = []
        caps: list[float] = []
        for a in assets:
            for gas, ef in a.emission_factors.items():
                efs.setdefault(gas, []).append(ef)
            if a.capacity_factor is not None:
                cfs.append(a.capacity_factor)
            if a.capacity is not None:
                caps.append(a.capacity)
        return cls(efs, cfs, caps)


@dataclass(frozen=True)
class ImputedAsset:
    asset: Asset
    imputed: dict[str, str]  # field -> "country" | "global"


def impute_asset_defaults(
    asset: Asset,
    country_pool: DefaultPools,
    global_pool: DefaultPools,
    gases: Iterable[Gas] = (),
) -> ImputedAsset:
    """Complete an asset's missing EF / CF / capacity from peer assets.

    Emission and capacity factors take the median of the pool, capacity the
    mean. The country pool is used when it has values, else the global pool.

    Raises:
        UnestimableError: a missing field has no value in either pool.
    """
    imputed: dict[str, str] = {}

    def pick(country_vals: Sequence[float], global_vals: Sequence[float], how, name: str) -> float:
        if country_vals:
            imputed[name] = "country"
            return how(country_vals)
        if global_vals:
            imputed[name] = "global"
            return how(global_vals)
        raise UnestimableError(f"asset {asset.id}: no country or global pool for {name}")

    efs = dict(asset.emission_factors)
    for gas in gases:
        if gas not in efs:
            efs[gas] = pick(
                country_pool.emission_factors.get(gas, ()),
                global_pool.emission_factors.get(gas, ()),
                statistics.median,
                f"ef_{gas.value}",
            )
    cf = asset.capacity_factor
    if cf is None:
        cf = pick(country_pool.capacity_factors, global_pool.capacity_factors, statistics.median, "capacity_factor")
    cap = asset.capacity
    if cap is None:
        cap = pick(country_pool.capacities, global_pool.capacities, statistics.fmean, "capacity")
    done = replace(asset, capacity=cap, capacity_factor=cf, emission_factors=efs)
    return ImputedAsset(done, imputed)


def compute_remainder(country_total: float, asset_sum: float) -> tuple[float, float]:
    """Effective country total and the spatially uncertain remainder.

    The country figure is a lower bound: when assets already exceed it the
    asset sum becomes the total and nothing is left over.
    """
    if country_total < 0 or asset_sum < 0:
        raise DomainError("totals must be non-negative")
    if asset_sum > country_total:
        return asset_sum, 0.0
    return country_total, country_total - asset_sum


def allocate_remainder(
    remainder: float,
    cells: Sequence[tuple[str, float]],
    *,
    country: str,
    subsector: str = "",
    gas: Gas = Gas.CO2,
    period: Period | None = None,
) -> tuple[list[EmissionRecord], bool]:
    """Spread a remainder over spatial units in proportion to proxy weights.

    Returns the records and whether the remainder had to be parked at
    country level because the proxy surface is empty for this country.
    """
    if remainder < 0:
        raise DomainError(f"remainder {remainder} is negative")
    if any(w < 0 for _, w in cells):
        raise DomainError("proxy weights must be non-negative")
    period = period or Period.year(2021)

    def record(source: str, amount: float, conf: ConfidenceLevel) -> EmissionRecord:
        return EmissionRecord(
            source=source,
            subsector=subsector,
            gas=gas,
            period=period,
            amount=amount,
            provenance=Provenance.REMAINDER,
            confidence=conf,
            country=country,
        )

    weights = [w for _, w in cells]
    if not cells or math.fsum(weights) <= 0:
        if remainder > 0:
            log.warning("proxy empty for %s/%s; parking %.6g t at country level", country, subsector, remainder)
            return [record(country, remainder, ConfidenceLevel.VERY_LOW)], True
        return [record(cid, 0.0, ConfidenceLevel.LOW) for cid, _ in cells], False
    # shares are computed in id order so the rounding residual does not
    # depend on how the cells were listed
    order = sorted(range(len(cells)), key=lambda i: cells[i][0])
    shares = proportional_shares(remainder, [weights[i] for i in order])
    by_pos = dict(zip(order, shares))
    return [record(cid, by_pos[i], ConfidenceLevel.LOW) for i, (cid, _) in enumerate(cells)], False


@dataclass(frozen=True)
class SubtractionResult:
    amount: float
    clamped: bool
    diagnostic: str = ""


def implicit_subtract(broad_total: float, covered: Sequence[float]) -> SubtractionResult:
    """Infer an uncovered category as the broad total minus covered ones."""
    if broad_total < 0 or any(c < 0 for c in covered):
        raise DomainError("inputs must be non-negative")
    diff = broad_total - math.fsum(covered)
    if diff < 0:
        msg = f"covered categories ({math.fsum(covered)}) exceed broad total ({broad_total})"
        log.info(msg)
        return SubtractionResult(0.0, True, msg)
    return SubtractionResult(diff, False)


def largest_remainder_round(values: Sequence[float], total: int | None = None) -> list[int]:
    """Round values to integers whose sum equals ``total``.

    ``total`` defaults to the rounded sum of ``values``. Floors are handed out
    first; remaining units go to the largest fractional parts, ties to the
    earlier position.
    """
    if any(v < 0 for v in values):
        raise DomainError("values must be non-negative")
    exact = [Fraction(v) for v in values]
    if total is None:
        total = round(sum(exact))
    vsum = sum(exact)
    if vsum == 0:
        if total:
            raise DomainError("cannot apportion a positive total over zeros")
        return [0] * len(values)
    scaled = [v * total / vsum for v in exact]
    floors = [math.floor(s) for s in scaled]
    left = total - sum(floors)
    order = sorted(range(len(values)), key=lambda i: (-(scaled[i] - floors[i]), i))
    for i in order[:left]:
        floors[i] += 1
    return floors
