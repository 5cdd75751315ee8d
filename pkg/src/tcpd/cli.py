"""Command-line entry point.

Exit codes: 0 success (decompose: converged), 2 decompose stopped without
converging, 1 any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter

from ._io import atomic_writer
from .bench import load_bench_config, run_benchmark
from .pipeline import (
    DEFAULT_THRESHOLDS,
    IngestConfig,
    IngestError,
    IngestStats,
    aggregate,
    detect,
    load_ingest_config,
    parse_trips,
    read_events,
    top_zones,
)
from .solver import ConfigError, SolverConfig, solve
from .tensor import DTFError, read_dtf, write_dtf

log = logging.getLogger("tcpd")

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2


class CliError(Exception):
    pass


def _require_file(path, what):
    if path is None:
        raise CliError(f"--{what} is required")
    if not os.path.isfile(path):
        raise CliError(f"{what} file not found: {path}")


def _output_dir(path):
    if path is None:
        raise CliError("--output is required")
    os.makedirs(path, exist_ok=True)
    return path


def _dump_json(path, doc):
    with atomic_writer(path) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_decompose(args) -> int:
    _require_file(args.input, "input")
    _require_file(args.config, "config")
    out = _output_dir(args.output)
    with open(args.config) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("<file>", "top level must be an object")
    if args.seed is not None:
        doc["seed"] = args.seed
    config = SolverConfig.from_dict(doc)
    print(f"solver config: {json.dumps(config.to_dict(), sort_keys=True)}", file=sys.stderr)
    t = read_dtf(args.input)
    result = solve(t, config)
    summary = {
        "config": config.to_dict(),
        "zeta0": float(result.zeta0),
        "iterations": result.iterations,
        "final_residual": result.trace[-1].residual if result.trace else None,
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "sparse_support": int((result.sparse != 0).sum()),
    }
    summary_text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    # everything is computed and serialized before the first file is written
    write_dtf(os.path.join(out, "L.dtf"), result.low_rank)
    write_dtf(os.path.join(out, "S.dtf"), result.sparse)
    result.write_trace(os.path.join(out, "trace.csv"))
    with atomic_writer(os.path.join(out, "index_sets.json")) as fh:
        fh.write(result.index_sets.to_json())
    with atomic_writer(os.path.join(out, "summary.json")) as fh:
        fh.write(summary_text)
    log.info("%s after %d iterations, residual %.3e", result.stop_reason, result.iterations,
             result.trace[-1].residual)
    return EXIT_OK if result.converged else EXIT_BUDGET


def cmd_synth_bench(args) -> int:
    _require_file(args.config, "config")
    out = _output_dir(args.output)
    cfg = load_bench_config(args.config)
    if args.seed is not None:
        cfg = type(cfg)(**{**cfg.__dict__, "seed": args.seed})
    print(f"benchmark config: {cfg}", file=sys.stderr)
    rows = run_benchmark(cfg, os.path.join(out, "bench.csv"), os.path.join(out, "timings.csv"))
    _dump_json(
        os.path.join(out, "manifest.json"),
        {
            "dims": list(cfg.dims),
            "ranks": list(cfg.ranks),
            "densities": list(cfg.densities),
            "row_cards": [list(c) for c in cfg.row_cards],
            "trials": cfg.trials,
            "seed": cfg.seed,
            "fixed_instance": cfg.fixed_instance,
            "magnitude": cfg.magnitude,
            "solver": cfg.solver,
            "rows": len(rows),
            "failed_rows": sum(r["status"] != "ok" for r in rows),
        },
    )
    return EXIT_OK


def _ingest_config(path) -> tuple[dict, int | None]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"ingest config is not valid JSON ({exc})") from None
    n_top = doc.pop("top_zones", None)
    if n_top is not None and "zones" in doc:
        raise IngestError("zones: give either 'zones' or 'top_zones', not both")
    return doc, n_top


def cmd_ingest(args) -> int:
    _require_file(args.input, "input")
    _require_file(args.config, "config")
    out = _output_dir(args.output)
    doc, n_top = _ingest_config(args.config)
    year = doc.get("year")
    if year is None:
        raise IngestError("year: missing required key")
    cols = {k: doc[k] for k in ("time_column", "zone_column") if k in doc}
    if n_top is not None:
        with open(args.input, newline="") as fh:
            volumes = Counter(r.zone for r in parse_trips(fh, year, **cols))
        doc["zones"] = list(top_zones(volumes, int(n_top)))
    config = IngestConfig.from_dict(doc)
    print(f"ingest config: {json.dumps(config.to_dict())}", file=sys.stderr)
    stats = IngestStats()
    with open(args.input, newline="") as fh:
        tensor = aggregate(parse_trips(fh, year, config.time_column, config.zone_column, stats),
                           config, stats)
    write_dtf(os.path.join(out, "tensor.dtf"), tensor)
    _dump_json(os.path.join(out, "stats.json"), {**stats.as_dict(), "shape": list(tensor.shape)})
    _dump_json(os.path.join(out, "ingest_config.json"), config.to_dict())
    return EXIT_OK


def _thresholds(text):
    if text is None:
        return DEFAULT_THRESHOLDS
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise CliError(f"bad --threshold-list {text!r}") from None


def cmd_detect(args) -> int:
    _require_file(args.input, "input")
    _require_file(args.config, "config")
    _require_file(args.events, "events")
    out = _output_dir(args.output)
    config = load_ingest_config(args.config)
    thresholds = _thresholds(args.threshold_list)
    sparse = read_dtf(args.input)
    with open(args.events, newline="") as fh:
        events = read_events(fh, config.year)
    report = detect(sparse, events, config, thresholds, pool_hours=args.pool_hours)
    report.write_thresholds_csv(os.path.join(out, "detections.csv"))
    report.write_ranked_csv(os.path.join(out, "ranked.csv"), config)
    for k in thresholds:
        log.info("top %g%%: %d selected, %d/%d events", k, report.selected[k],
                 report.counts[k], len(events))
    return EXIT_OK


def cmd_report(args) -> int:
    """Print a summary of a decompose or detect output directory."""
    if args.input is None or not os.path.isdir(args.input):
        raise CliError("--input must be an output directory")
    printed = False
    summary = os.path.join(args.input, "summary.json")
    if os.path.isfile(summary):
        with open(summary) as fh:
            doc = json.load(fh)
        print(f"stop: {doc['stop_reason']}  iterations: {doc['iterations']}  "
              f"residual: {doc['final_residual']:.3e}  support: {doc['sparse_support']}")
        printed = True
    det = os.path.join(args.input, "detections.csv")
    if os.path.isfile(det):
        with open(det, newline="") as fh:
            for row in csv.DictReader(fh):
                print(f"top {row['k_percent']}%: {row['detected']} events ({row['selected']} entries)")
        printed = True
    if not printed:
        raise CliError(f"nothing to report in {args.input}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcpd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--input", help="input file or directory")
        sp.add_argument("--output", help="output directory")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        return sp

    common(sub.add_parser("decompose", help="split a DTF1 tensor into low-rank and sparse parts")).set_defaults(
        func=cmd_decompose)
    common(sub.add_parser("synth-bench", help="run a planted-instance benchmark sweep")).set_defaults(
        func=cmd_synth_bench)
    common(sub.add_parser("ingest", help="aggregate a trip CSV into a count tensor")).set_defaults(
        func=cmd_ingest)
    d = common(sub.add_parser("detect", help="score a sparse tensor against an event list"))
    d.add_argument("--events", help="event CSV (date, zones, label)")
    d.add_argument("--threshold-list", help="comma-separated top-K%% levels")
    d.add_argument("--pool-hours", action="store_true", help="max-pool scores over the hour mode")
    d.set_defaults(func=cmd_detect)
    common(sub.add_parser("report", help="summarize an output directory")).set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (CliError, ConfigError, IngestError, DTFError, ValueError, TypeError, OSError) as exc:
        print(f"tcpd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
