import math

import pytest
from hypothesis import given, strategies as st

from tracesynth.copollutants import (
    EXACT,
    FUEL_COLLAPSED,
    GLOBAL,
    REGION,
    ReferenceRow,
    build_ratio_table,
    co2e_by_key,
    compute_ratio,
    direct_pollutants,
    merge_reference,
    pollutant_totals,
    scale_pollutants,
)
from tracesynth.errors import DomainError, WrongPathError
from tracesynth.model import (
    ConfidenceLevel,
    EmissionRecord,
    Gas,
    GwpTable,
    Period,
    PollutantPath,
    Provenance,
    Subsector,
)

GWP = GwpTable.default()
JAN = Period.month(2021, 1)


def ghg(sub, country, gas, t, fuel=None, region=None):
    return ReferenceRow(sub, country, gas, t, fuel, region)


REF_GHG = [
    ghg("steel", "AAA", Gas.CO2, 100.0, "coal", "R1"),
    ghg("steel", "AAA", Gas.CH4, 1.0, "coal", "R1"),
    ghg("steel", "AAA", Gas.CO2, 50.0, "gas", "R1"),
    ghg("steel", "BBB", Gas.CO2, 300.0, None, "R1"),
    ghg("steel", "CCC", Gas.CO2, 80.0, None, "R2"),
]
REF_POL = [
    ghg("steel", "AAA", Gas.NOX, 6.4, "coal"),
    ghg("steel", "AAA", Gas.NOX, 1.0, "gas"),
    ghg("steel", "BBB", Gas.NOX, 3.0),
    ghg("steel", "CCC", Gas.SO2, 0.8),
]


def co2e_record(source, sub, country, amount, fuel=None, conf=ConfidenceLevel.HIGH):
    return EmissionRecord(source, sub, Gas.CO2E_100, JAN, amount, Provenance.MODELED, conf, country=country, fuel=fuel)


def test_compute_ratio_examples():
    assert compute_ratio(5, 10) == 0.5
    assert compute_ratio(0, 10) == 0
    assert compute_ratio(3, 7) == pytest.approx(3 / 7)
    assert compute_ratio(5, 0) is None
    with pytest.raises(DomainError):
        compute_ratio(-1, 10)


def test_ratio_lookup_fallback_chain():
    table = build_ratio_table(REF_GHG, REF_POL, GWP, 100)
    hit = table.lookup("steel", Gas.NOX, "AAA", "coal")
    assert hit.level == EXACT and hit.ratio == pytest.approx(6.4 / 128)
    assert not hit.is_fallback
    # unknown fuel collapses to the CO2e-weighted country ratio
    hit = table.lookup("steel", Gas.NOX, "AAA", "oil")
    assert hit.level == FUEL_COLLAPSED and hit.ratio == pytest.approx(7.4 / 178)
    # an unknown country in region R1 gets the pooled AAA+BBB ratio
    table.regions["DDD"] = "R1"
    hit = table.lookup("steel", Gas.NOX, "DDD")
    assert hit.level == REGION and hit.is_fallback
    assert hit.ratio == pytest.approx(10.4 / 478)
    hit = table.lookup("steel", Gas.SO2, "EEE")
    assert hit.level == GLOBAL and hit.is_fallback and hit.ratio == pytest.approx(0.01)
    assert table.lookup("cement", Gas.NOX, "AAA") is None


def test_zero_co2e_reference_is_skipped_with_diagnostic():
    table = build_ratio_table([ghg("x", "AAA", Gas.CO2, 0.0)], [ghg("x", "AAA", Gas.NOX, 1.0)], GWP, 100)
    assert not table.exact and table.diagnostics


def test_round_trip_reproduces_reference_pollutants():
    table = build_ratio_table(REF_GHG, REF_POL, GWP, 100)
    base = co2e_by_key(REF_GHG, GWP, 100)
    records = [co2e_record(f"{s}-{c}-{f}", s, c, v, f) for (s, c, f), v in base.items()]
    gases = [Gas.NOX, Gas.SO2]
    scaled, _ = scale_pollutants(records, table, gases)
    totals = pollutant_totals(scaled)
    for row in REF_POL:
        assert math.isclose(totals[row.key], row.tonnes, rel_tol=1e-9)


def test_scaling_splits_by_co2e_share_and_caps_confidence():
    table = build_ratio_table(REF_GHG, REF_POL, GWP, 100)
    recs = [co2e_record("a", "steel", "BBB", 120.0), co2e_record("b", "steel", "BBB", 180.0)]
    out, notes = scale_pollutants(recs, table, [Gas.NOX, Gas.SO2])
    nox = {r.source: r.amount for r in out if r.gas is Gas.NOX}
    assert nox["a"] == pytest.approx(1.2) and nox["b"] == pytest.approx(1.8)
    assert all(r.confidence == ConfidenceLevel.MEDIUM for r in out)
    assert all(r.provenance is Provenance.MODELED for r in out)
    # SO2 only has a global ratio from CCC, so it still resolves
    assert {r.gas for r in out} == {Gas.NOX, Gas.SO2}
    with pytest.raises(DomainError):
        scale_pollutants([EmissionRecord("x", "steel", Gas.CO2, JAN, 1.0, Provenance.MODELED)], table, [Gas.NOX])


@given(st.sampled_from([0.5, 2.0, 10.0]), st.floats(0.001, 1e6))
def test_scaling_is_linear(k, amount):
    table = build_ratio_table(REF_GHG, REF_POL, GWP, 100)
    one, _ = scale_pollutants([co2e_record("a", "steel", "AAA", amount, "coal")], table, [Gas.NOX])
    many, _ = scale_pollutants([co2e_record("a", "steel", "AAA", k * amount, "coal")], table, [Gas.NOX])
    assert math.isclose(many[0].amount, k * one[0].amount, rel_tol=1e-12)


def test_direct_path():
    power = Subsector.with_path("electricity-generation")
    rec = direct_pollutants(power, Gas.NOX, 50.0, 0.1, source="P1", period=JAN)
    assert rec.amount == pytest.approx(5.0)
    textiles = Subsector.with_path("textiles", path=PollutantPath.COPOLLUTANT)
    with pytest.raises(WrongPathError):
        direct_pollutants(textiles, Gas.NOX, 50.0, 0.1, source="T1", period=JAN)
    with pytest.raises(DomainError):
        direct_pollutants(power, Gas.CO2, 50.0, 0.1, source="P1", period=JAN)


def test_merge_reference_prefers_primary():
    primary = [ghg("steel", "AAA", Gas.NOX, 1.0)]
    secondary = [ghg("steel", "AAA", Gas.NOX, 9.0), ghg("steel", "BBB", Gas.NOX, 2.0)]
    merged = merge_reference(primary, secondary)
    assert {r.country: r.tonnes for r in merged} == {"AAA": 1.0, "BBB": 2.0}
