"""Command line entry point.

Exit codes: 0 success, 1 validation failure, 2 conservation failure.
Log verbosity comes from ``TRACESYNTH_LOG`` (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import aggregation as agg
from .analysis import GDP_THRESHOLD, classify_by_threshold, compare_groups, jenks_breaks, pct_change_series
from .config import RunConfig, parse_window
from .copollutants import build_ratio_table, merge_reference, scale_pollutants
from .errors import ConfigError, ConservationError, InputValidationError, TraceSynthError, UsageError
from .ingest import load_reference
from .model import Granularity, GwpTable, co2e_gas
from .pipeline import diff_totals, load_inputs, synthesize, totals_from_export, write_outputs

EXIT_OK, EXIT_VALIDATION, EXIT_CONSERVATION = 0, 1, 2

log = logging.getLogger("tracesynth")


def _setup_logging() -> None:
    level = os.environ.get("TRACESYNTH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load_config(args: argparse.Namespace) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = RunConfig.load(args.config)
    return cfg.with_overrides(
        window=parse_window(args.window) if getattr(args, "window", None) else None,
        horizon=getattr(args, "horizon", None),
        formats=(args.format,) if getattr(args, "format", None) else None,
        jobs=getattr(args, "jobs", None),
    )


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    inputs = load_inputs(cfg)
    for f in inputs.validation.findings:
        print(f"{f.severity}: {f.kind}: {f.message}")
    if inputs.validation.errors:
        return EXIT_VALIDATION
    print(f"ok: {len(inputs.registry)} assets, {len(inputs.totals.rows)} country totals")
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = synthesize(cfg, check=False)
    out = Path(args.out_dir)
    write_outputs(result, out)
    if not result.report.success:
        print("conservation audit failed:", file=sys.stderr)
        for key in result.report.failing_keys:
            print(f"  {key}", file=sys.stderr)
        return EXIT_CONSERVATION
    print(f"wrote {len(result.records)} source records to {out}")
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace) -> int:
    rows = agg.load_inventory(args.inventory)
    index = agg.load_boundaries(args.boundaries)
    records = agg.rows_to_records(rows)
    gran = Granularity(args.granularity)
    result = agg.rollup(records, args.level, index, gran)
    if result.quarantined:
        print(f"{len(result.quarantined)} record(s) quarantined (no country)", file=sys.stderr)
    agg.export_inventory([agg.ExportRow.from_total(t) for t in result.rows], args.out, args.format)
    return EXIT_OK


def cmd_pollutants(args: argparse.Namespace) -> int:
    gwp = GwpTable.from_csv(args.gwp) if args.gwp else GwpTable.default()
    ghg = load_reference(args.reference_ghg)
    pol = load_reference(args.reference_pollutants)
    if args.secondary_ghg:
        ghg = merge_reference(ghg, load_reference(args.secondary_ghg))
    if args.secondary_pollutants:
        pol = merge_reference(pol, load_reference(args.secondary_pollutants))
    table = build_ratio_table(ghg, pol, gwp, args.horizon)
    for note in table.diagnostics:
        log.info(note)
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subsector", "gas", "country", "fuel", "ratio"])
        for s, g, c, f, r in table.rows():
            w.writerow([s, g, c, f, repr(r)])
    if args.inventory:
        target = co2e_gas(args.horizon)
        rows = [r for r in agg.load_inventory(args.inventory) if r.gas == target.value]
        records = agg.rows_to_records(rows)
        gases = sorted({g for (_, g, _, _) in table.exact}, key=lambda g: g.value)
        scaled, notes = scale_pollutants(records, table, gases)
        for n in notes:
            log.info(n)
        agg.export_inventory(
            [agg.ExportRow.from_record(r, rows[0].level if rows else "asset") for r in scaled],
            args.scaled_out or out.with_name("scaled_pollutants.csv"),
        )
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    series: dict[str, dict[int, float]] = {}
    with open(args.totals, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            series.setdefault(row["unit_id"], {})[int(row["year"])] = float(row["tonnes"])
    out = csv.writer(sys.stdout if args.out == "-" else open(args.out, "w", newline="", encoding="utf-8"),
                     lineterminator="\n")
    out.writerow(["unit_id", "first_year", "last_year", "mean_annual_pct", "cagr_pct", "label"])
    labels: dict[str, str] = {}
    if args.gdp:
        gdp: dict[str, float] = {}
        with open(args.gdp, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                gdp[row["unit_id"]] = float(row["gdp_per_capita"])
        units = sorted(gdp)
        threshold = args.threshold
        if args.classes:
            jr = jenks_breaks([gdp[u] for u in units], args.classes)
            print(f"# jenks breaks: {jr.breaks}", file=sys.stderr)
            if threshold is None:
                threshold = min(v for v in gdp.values() if v > jr.breaks[-1])
        labels = dict(zip(units, classify_by_threshold([gdp[u] for u in units], threshold or GDP_THRESHOLD)))
    changes = {}
    for unit in sorted(series):
        years = sorted(series[unit])
        tr = pct_change_series([series[unit][y] for y in years], unit_id=unit, years=years)
        changes[unit] = tr.mean_change
        out.writerow([unit, years[0], years[-1], repr(tr.mean_change), repr(tr.cagr), labels.get(unit, "")])
    if labels:
        cmp = compare_groups({u: c for u, c in changes.items() if u in labels}, labels)
        print(json.dumps(cmp.__dict__, sort_keys=True, default=str), file=sys.stderr)
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    name = f"inventory_{args.level}.csv"
    report = diff_totals(
        totals_from_export(Path(args.previous) / name), totals_from_export(Path(args.current) / name), args.threshold
    )
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["unit_id", "subsector", "gas", "year", "previous", "current"])
    for row in report.rows():
        w.writerow([row[k] if row[k] is not None else "" for k in ("unit_id", "subsector", "gas", "year", "previous", "current")])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tracesynth", description="Emissions inventory synthesis engine")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", required=True)
        sp.add_argument("--window", help="YYYY-MM:YYYY-MM")
        sp.add_argument("--horizon", type=int, choices=(100, 20))
        sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("validate", help="load and cross-check inputs")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("synthesize", help="run the full pipeline")
    common(sp)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--format", choices=agg.FORMATS)
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("aggregate", help="roll an exported source inventory up a boundary level")
    sp.add_argument("--inventory", required=True)
    sp.add_argument("--boundaries", required=True)
    sp.add_argument("--level", choices=agg.LEVELS, default=agg.GADM0)
    sp.add_argument("--granularity", choices=("monthly", "annual"), default="monthly")
    sp.add_argument("--format", choices=agg.FORMATS, default="csv")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_aggregate)

    sp = sub.add_parser("pollutants", help="build co-pollutant ratios, optionally scale an inventory")
    sp.add_argument("--reference-ghg", required=True)
    sp.add_argument("--reference-pollutants", required=True)
    sp.add_argument("--secondary-ghg")
    sp.add_argument("--secondary-pollutants")
    sp.add_argument("--gwp")
    sp.add_argument("--horizon", type=int, choices=(100, 20), default=100)
    sp.add_argument("--inventory", help="exported inventory holding CO2e rows to scale")
    sp.add_argument("--scaled-out")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pollutants)

    sp = sub.add_parser("analyze", help="trend statistics and GDP classification")
    sp.add_argument("--totals", required=True, help="CSV with unit_id, year, tonnes")
    sp.add_argument("--gdp", help="CSV with unit_id, gdp_per_capita")
    sp.add_argument("--classes", type=int, help="Jenks classes used to derive the threshold")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("diff", help="compare two synthesis output directories")
    sp.add_argument("previous")
    sp.add_argument("current")
    sp.add_argument("--level", choices=agg.LEVELS, default=agg.GADM0)
    sp.add_argument("--threshold", type=float, default=0.01)
    sp.set_defaults(func=cmd_diff)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConservationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for key in exc.failing_keys:
            print(f"  {key}", file=sys.stderr)
        return EXIT_CONSERVATION
    except (InputValidationError, ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TraceSynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
