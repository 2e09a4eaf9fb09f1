"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also gathered into the terminal summary by ``conftest.py`` so
they show up without ``-s``.
"""

import csv
import math
import random
import shutil
import time
from contextlib import contextmanager
from datetime import date, timedelta
from fractions import Fraction
from pathlib import Path

from tracesynth.analysis import HIGHER, classify_by_threshold, jenks_breaks
from tracesynth.config import RunConfig
from tracesynth.copollutants import (
    ReferenceRow,
    build_ratio_table,
    co2e_by_key,
    pollutant_totals,
    scale_pollutants,
)
from tracesynth.disaggregation import compute_remainder
from tracesynth.model import (
    EmissionRecord,
    Gas,
    GwpTable,
    Period,
    Provenance,
    compute_activity,
    compute_emissions,
    decompose_emissions,
)
from tracesynth.pipeline import synthesize, write_outputs
from tracesynth.quality import average_ranks, compare_metrics, propagate_uncertainty
from tracesynth.temporal import annual_to_monthly, impute_series, quarterly_to_monthly, span_to_monthly

from conftest import TOY
from oracles import brute_jenks, brute_metrics, exact_ssd, per_day_oracle

GOLDEN = TOY / "golden"
LEVELS = ("sources", "gadm0", "gadm1", "gadm2", "fua")


@contextmanager
def criterion(record_property, label):
    record_property("criterion", label)
    try:
        yield
    except BaseException:
        print(f"FAIL {label}")
        raise
    print(f"PASS {label}")


def close(a, b, rel):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300) or a == b


# -- random fixtures for the conservation suite ----------------------------------------

ASSET_HEADER = [
    "asset_id", "subsector", "country", "lat", "lon", "capacity", "capacity_factor",
    "scraped", "emitting", "has_reported_emissions", "output", "fuel", "quantity_kind",
    "operating_start", "operating_end", "ef_granularity", "activity_source",
    "unc_capacity", "unc_capacity_factor", "unc_ef", "ef_CO2", "ef_CH4", "ef_NOx",
]
SUBSECTORS = {
    "electricity-generation": ("modeled", "direct", "power"),
    "cement": ("modeled", "copollutant", "flat"),
    "textiles": ("disaggregated", "copollutant", "textiles"),
}


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def make_random_fixture(rnd, root: Path) -> tuple[Path, dict]:
    """Write a random but valid fixture; returns the config path and totals."""
    root.mkdir(parents=True)
    countries = ["AAA", "BBB", "CCC"][: rnd.randint(1, 3)]
    _write(root / "subsectors.csv",
           ["subsector", "ipcc_sector", "method", "pollutant_path", "profile_id", "emitting_ratio"],
           [[s, "x", m, p, prof, round(rnd.uniform(0.3, 1), 3) if m == "disaggregated" else ""]
            for s, (m, p, prof) in SUBSECTORS.items()])
    shutil.copy(TOY / "profiles.csv", root / "profiles.csv")

    assets, boundaries, reported = [], [], []
    complete: set[str] = set()
    for i in range(rnd.randint(0, 50)):
        sub = rnd.choice(list(SUBSECTORS))
        country = rnd.choice(countries)
        aid = f"X{i}"
        row = dict.fromkeys(ASSET_HEADER, "")
        row.update(asset_id=aid, subsector=sub, country=country, scraped="true",
                   emitting="false" if rnd.random() < 0.1 else "true",
                   has_reported_emissions="false", quantity_kind="extensive",
                   ef_granularity=rnd.choice(["asset", "regional", "country"]),
                   activity_source=rnd.choice(["reported", "satellite-modeled", "proxy"]))
        if SUBSECTORS[sub][0] == "modeled":
            row["capacity"] = round(rnd.uniform(1, 500), 3)
            # the first asset of a subsector is complete so medians always exist
            full = sub not in complete or rnd.random() < 0.7
            if full:
                row["capacity_factor"] = round(rnd.uniform(0.05, 0.95), 3)
                row["ef_CO2"] = round(rnd.uniform(0.01, 3), 4)
                row["ef_CH4"] = round(rnd.uniform(0, 0.05), 5)
                complete.add(sub)
            if sub == "electricity-generation" and rnd.random() < 0.5:
                row["ef_NOx"] = round(rnd.uniform(0, 0.2), 4)
        else:
            if rnd.random() < 0.8:
                row["output"] = 0 if rnd.random() < 0.2 else round(rnd.uniform(0, 100), 3)
            if rnd.random() < 0.15:
                row["has_reported_emissions"] = "true"
                reported.append([aid, "CO2", "2021-01-01", "2022-01-01", round(rnd.uniform(0, 200), 3)])
        assets.append([row[h] for h in ASSET_HEADER])
        if rnd.random() < 0.8:
            g1 = rnd.choice([f"{country}.1", f"{country}.2", ""])
            g2 = f"{g1}.a" if g1 and rnd.random() < 0.5 else ""
            boundaries.append([aid, country, g1, g2, rnd.choice(["", "F1", "F1;F2"])])
    _write(root / "assets.csv", ASSET_HEADER, assets)
    _write(root / "reported.csv", ["asset_id", "gas", "period_start", "period_end", "tonnes"], reported)

    proxy = []
    for sub in SUBSECTORS:
        for c in countries:
            n = rnd.randint(0, 4)
            all_zero = rnd.random() < 0.25
            for k in range(n):
                proxy.append([sub, c, f"{c}-{k}", 0 if all_zero else round(rnd.uniform(0, 10), 3)])
    _write(root / "proxy.csv", ["subsector", "country", "cell_id", "weight"], proxy)
    for c in countries:
        for k in range(4):
            if rnd.random() < 0.8:
                boundaries.append([f"{c}-{k}", c, rnd.choice([f"{c}.1", ""]), "", ""])
    _write(root / "boundaries.csv", ["source_id", "gadm0", "gadm1", "gadm2", "fua"], boundaries)

    totals = {}
    rows = []
    for sub in SUBSECTORS:
        for c in countries:
            for gas, p in (("CO2", 0.8), ("CH4", 0.4)):
                if rnd.random() < p:
                    scale = rnd.choice([5e2, 5e4]) * (1 if gas == "CO2" else 0.02)
                    t = 0.0 if rnd.random() < 0.1 else round(rnd.uniform(0, scale), 3)
                    totals[(c, sub, gas)] = t
                    rows.append([c, sub, gas, 2021, t, "rnd", ""])
    _write(root / "country_totals.csv",
           ["country", "subsector", "gas", "year", "tonnes", "source", "uncertainty_pct"], rows)

    names = ["assets", "subsectors", "country_totals", "proxy", "profiles", "boundaries", "reported"]
    cfg = root / "config.yaml"
    cfg.write_text("inputs:\n" + "".join(f"  {n}: {n}.csv\n" for n in names) + 'window: "2021-01:2021-12"\n')
    return cfg, totals


def check_conservation(result, totals) -> list[str]:
    """Compare every level's per-country sums with the effective totals."""
    problems = []
    asset_sum: dict[tuple, float] = {}
    source_sum: dict[tuple, float] = {}
    for r in result.records:
        if not r.gas.is_ghg:
            continue
        key = (r.country, r.subsector, r.gas.value)
        source_sum[key] = source_sum.get(key, 0.0) + r.amount
        if r.provenance is not Provenance.REMAINDER:
            asset_sum[key] = asset_sum.get(key, 0.0) + r.amount
    expected = dict(source_sum)
    for key, total in totals.items():
        expected[key] = max(total, asset_sum.get(key, 0.0))
    for level in ("gadm0", "gadm1", "gadm2"):
        got: dict[tuple, float] = {}
        for t in result.rollups[level].rows:
            if t.gas.is_ghg:
                key = (t.unit_id.split(".")[0], t.subsector, t.gas.value)
                got[key] = got.get(key, 0.0) + t.tonnes
        for key in set(expected) | set(got):
            want, have = expected.get(key, 0.0), got.get(key, 0.0)
            if abs(want - have) > 1e-6 * max(abs(want), 1e-9):
                problems.append(f"{level} {key}: expected {want}, got {have}")
    return problems


# -- criteria --------------------------------------------------------------------------


def test_criterion_01_conservation_on_random_fixtures(tmp_path, record_property):
    with criterion(record_property, "01 conservation on 200 random fixtures at every level"):
        rnd = random.Random(20210101)
        configs = [make_random_fixture(rnd, tmp_path / f"f{i}") for i in range(200)]
        started = time.perf_counter()
        problems = []
        for i, (cfg, totals) in enumerate(configs):
            result = synthesize(RunConfig.load(cfg))
            problems += [f"fixture {i}: {p}" for p in check_conservation(result, totals)]
        elapsed = time.perf_counter() - started
        assert not problems, problems[:10]
        assert elapsed < 10, f"took {elapsed:.2f} s"


def test_criterion_02_remainder_rule(record_property):
    with criterion(record_property, "02 remainder rule on random (total, asset_sum) pairs"):
        rnd = random.Random(2)
        pairs = [(0.0, 0.0), (5.0, 5.0), (1.0, 2.0), (2.0, 1.0)]
        pairs += [(rnd.uniform(0, 1e6), rnd.uniform(0, 1e6)) for _ in range(10_000)]
        pairs += [(float(rnd.randint(0, 50)), float(rnd.randint(0, 50))) for _ in range(1_000)]
        for total, assets in pairs:
            effective, rem = compute_remainder(total, assets)
            if assets > total:
                assert (effective, rem) == (assets, 0.0)
            else:
                assert (effective, rem) == (total, total - assets)


def test_criterion_03_temporal_conservation(record_property):
    with criterion(record_property, "03 temporal conservation and per-day span oracle"):
        rnd = random.Random(3)
        for _ in range(1000):
            raw = [rnd.random() ** rnd.choice([1, 3]) for _ in range(12)]
            if rnd.random() < 0.2:
                raw[rnd.randrange(12)] = 0.0
            raw[rnd.randrange(12)] += 1e-3
            s = math.fsum(raw)
            profile = [w / s for w in raw]
            annual = rnd.uniform(0, 1e9)
            parts = annual_to_monthly(annual, profile)
            assert abs(math.fsum(parts) - annual) <= 1e-9 * max(annual, 1.0)
            q = rnd.uniform(0, 1e9)
            assert abs(math.fsum(quarterly_to_monthly(q)) - q) <= 1e-9 * max(q, 1.0)
        spans = [(date(2024, 2, 1), date(2024, 3, 1)), (date(2024, 1, 20), date(2024, 3, 10)),
                 (date(2020, 2, 28), date(2020, 3, 2))]
        while len(spans) < 50:
            start = date(2019, 1, 1) + timedelta(days=rnd.randrange(0, 2600))
            spans.append((start, start + timedelta(days=rnd.randrange(1, 900))))
        for start, end in spans:
            amount = rnd.uniform(0, 1e6)
            got = span_to_monthly(start, end, amount)
            want = per_day_oracle(start, end, amount)
            assert set(got) == set(want)
            for m in want:
                assert close(got[m], want[m], 1e-9) or abs(got[m] - want[m]) < 1e-9
            assert abs(math.fsum(got.values()) - amount) <= 1e-9 * max(amount, 1.0)


def test_criterion_04_imputation_order(record_property):
    with criterion(record_property, "04 imputation rule order and idempotence"):
        assert impute_series([None, 5, None, None]).as_list() == [5, 5, 5, 5]
        assert impute_series([None, 5, None, 7]).as_list() == [5, 5, 7, 7]
        rnd = random.Random(4)
        for _ in range(100):
            values = [rnd.choice([0.0, rnd.uniform(0, 1e6)]) for _ in range(rnd.randint(1, 36))]
            once = impute_series(values).as_list()
            assert once == values
            assert impute_series(once).as_list() == once


def test_criterion_05_copollutant_round_trip(record_property):
    with criterion(record_property, "05 co-pollutant round trip and linearity"):
        rnd = random.Random(5)
        gwp = GwpTable.default()
        jan = Period.month(2021, 1)
        ghg, pol = [], []
        for s in ("steel", "textiles", "cement"):
            for c in ("AAA", "BBB", "CCC", "DDD"):
                for f in (None, "coal", "gas"):
                    if rnd.random() < 0.3:
                        continue
                    ghg.append(ReferenceRow(s, c, Gas.CO2, rnd.uniform(1, 1e5), f, "R1"))
                    if rnd.random() < 0.5:
                        ghg.append(ReferenceRow(s, c, Gas.CH4, rnd.uniform(0, 1e3), f, "R1"))
                    for g in (Gas.NOX, Gas.SO2, Gas.PM25):
                        if rnd.random() < 0.7:
                            pol.append(ReferenceRow(s, c, g, rnd.uniform(0, 1e3), f))
        table = build_ratio_table(ghg, pol, gwp, 100)
        base = co2e_by_key(ghg, gwp, 100)
        gases = [Gas.NOX, Gas.SO2, Gas.PM25]
        records = [
            EmissionRecord(f"{s}/{c}/{f}", s, Gas.CO2E_100, jan, v, Provenance.MODELED, country=c, fuel=f)
            for (s, c, f), v in base.items()
        ]
        scaled, _ = scale_pollutants(records, table, gases)
        totals = pollutant_totals(scaled)
        for row in pol:
            assert close(totals[row.key], row.tonnes, 1e-9), row
        for k in (0.5, 2.0, 10.0):
            bigger = [EmissionRecord(r.source, r.subsector, r.gas, r.period, r.amount * k, r.provenance,
                                     country=r.country, fuel=r.fuel) for r in records]
            out, _ = scale_pollutants(bigger, table, gases)
            for a, b in zip(scaled, out):
                assert (a.source, a.gas) == (b.source, b.gas)
                assert close(b.amount, k * a.amount, 1e-12)


def test_criterion_06_decomposition_round_trip(record_property):
    with criterion(record_property, "06 emissions algebra round trips on 10,000 triples"):
        rnd = random.Random(6)
        worst = 0.0
        for _ in range(10_000):
            c = 10 ** rnd.uniform(-3, 6)
            cf = rnd.uniform(1e-3, 1.0)
            ef = 10 ** rnd.uniform(-6, 2)
            e = compute_emissions(compute_activity(c, cf), ef)
            for name, truth, kw in (
                ("capacity", c, {"capacity_factor": cf, "emission_factor": ef}),
                ("capacity_factor", cf, {"capacity": c, "emission_factor": ef}),
                ("emission_factor", ef, {"capacity": c, "capacity_factor": cf}),
            ):
                got = decompose_emissions(e, **kw)
                worst = max(worst, abs(got - truth) / truth)
        assert worst < 1e-12, worst


def test_criterion_07_metrics_against_brute_force(record_property):
    with criterion(record_property, "07 metrics match brute-force reference"):
        rnd = random.Random(7)
        for _ in range(100):
            n = rnd.randint(2, 20)
            ref = [round(rnd.uniform(-50, 50), rnd.choice([0, 1, 3])) for _ in range(n)]
            est = [rnd.choice(ref) if rnd.random() < 0.3 else rnd.uniform(-100, 100) for _ in range(n)]
            got = compare_metrics(est, ref)
            mse, mae, r2, rho, rx, ry = brute_metrics(est, ref)
            assert [Fraction(x) for x in average_ranks(est)] == rx
            assert [Fraction(x) for x in average_ranks(ref)] == ry
            assert close(got.mse, float(mse), 1e-12)
            assert close(got.rmse, math.sqrt(float(mse)), 1e-12)
            assert close(got.mae, float(mae), 1e-12)
            assert math.isnan(got.r2) if r2 is None else abs(got.r2 - float(r2)) < 1e-12 * max(1, abs(float(r2)))
            assert math.isnan(got.spearman) if rho is None else abs(got.spearman - rho) < 1e-12
        ordered = sorted(rnd.uniform(0, 100) for _ in range(15))
        assert compare_metrics(ordered, ordered[::-1]).spearman == -1


def test_criterion_08_jenks_exhaustive(record_property):
    with criterion(record_property, "08 Jenks equals exhaustive minimum SSD (n <= 12, k <= 4)"):
        rnd = random.Random(8)
        datasets = []
        for n in range(2, 13):
            for _ in range(6):
                datasets.append([rnd.choice([rnd.randint(0, 30), round(rnd.uniform(0, 1e5), 2)]) for _ in range(n)])
        for vals in datasets:
            for k in range(2, min(4, len(vals)) + 1):
                r = jenks_breaks(vals, k)
                opt = brute_jenks(vals, k)
                groups = [[v for v, c in zip(vals, r.classes) if c == i] for i in range(k)]
                got = sum(exact_ssd(g) for g in groups if g)
                assert abs(float(got) - float(opt)) <= 1e-9 * max(1.0, float(opt))
        r = jenks_breaks([1, 2, 3, 10, 11, 12], 2)
        assert 3 <= r.breaks[0] < 10
        assert r.classes == [0, 0, 0, 1, 1, 1]


def test_criterion_09_threshold_classification(record_property):
    with criterion(record_property, "09 GDP value 57,333 classifies as higher"):
        assert classify_by_threshold([57_333]) == [HIGHER]
        assert classify_by_threshold([57_332.999]) != [HIGHER]


def test_criterion_10_uncertainty_quadrature(record_property):
    with criterion(record_property, "10 quadrature [3, 4] -> 5 and permutation invariance"):
        assert propagate_uncertainty([3, 4]) == 5
        rnd = random.Random(10)
        for _ in range(50):
            us = [rnd.uniform(0, 100) for _ in range(rnd.randint(1, 12))]
            base = propagate_uncertainty(us)
            for _ in range(5):
                perm = us[:]
                rnd.shuffle(perm)
                assert close(propagate_uncertainty(perm), base, 1e-15)


def _shuffled_copy(src: Path, dst: Path, rnd) -> Path:
    shutil.copytree(src, dst, ignore=shutil.ignore_patterns("golden", "*.py", "__pycache__"))
    for path in dst.glob("*.csv"):
        lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
        head, body = lines[:1], lines[1:]
        rnd.shuffle(body)
        path.write_text("".join(head + body), encoding="utf-8")
    return dst / "config.yaml"


def _export_bytes(cfg: Path, out: Path) -> dict[str, bytes]:
    write_outputs(synthesize(RunConfig.load(cfg)), out, formats=["csv", "geojson"])
    return {p.name: p.read_bytes() for p in sorted(out.glob("inventory_*"))}


def test_criterion_11_determinism(tmp_path, record_property):
    with criterion(record_property, "11 byte-identical exports across runs and permuted inputs"):
        first = _export_bytes(TOY / "config.yaml", tmp_path / "a")
        second = _export_bytes(TOY / "config.yaml", tmp_path / "b")
        assert first and first == second
        rnd = random.Random(11)
        for i in range(3):
            cfg = _shuffled_copy(TOY, tmp_path / f"shuffled{i}", rnd)
            assert _export_bytes(cfg, tmp_path / f"s{i}") == first


def _read_rows(path: Path) -> dict[tuple, dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    out = {}
    for r in rows:
        key = (r["unit_id"], r["level"], r["subsector"], r["gas"], r["period_start"], r["period_end"], r["provenance"])
        assert key not in out, key
        out[key] = r
    return out


def test_criterion_12_golden_fixture(tmp_path, record_property):
    with criterion(record_property, "12 toy fixture matches spreadsheet golden files"):
        started = time.perf_counter()
        write_outputs(synthesize(RunConfig.load(TOY / "config.yaml")), tmp_path)
        elapsed = time.perf_counter() - started
        for level in LEVELS:
            got = _read_rows(tmp_path / f"inventory_{level}.csv")
            want = _read_rows(GOLDEN / f"inventory_{level}.csv")
            assert set(got) == set(want), (level, sorted(set(got) ^ set(want))[:5])
            for key, w in want.items():
                g = got[key]
                assert close(float(g["tonnes"]), float(w["tonnes"]), 1e-6), (level, key)
                assert g["confidence"] == w["confidence"], (level, key)
                if w["uncertainty_pct"]:
                    assert close(float(g["uncertainty_pct"]), float(w["uncertainty_pct"]), 1e-6), (level, key)
                else:
                    assert g["uncertainty_pct"] == "", (level, key)
        assert elapsed < 5, f"took {elapsed:.2f} s"
