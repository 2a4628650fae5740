"""Command-line interface: ``etc-traffic {build,simulate,validate,export}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .abstraction import (
    Abstraction,
    BuildReport,
    StageError,
    build_abstraction,
    monte_carlo_validate,
    simulate,
    validate_trace,
)
from .config import ConfigError, load_config
from .etc_model import trace_to_csv
from .isochron import radial_sweep_csv
from .overapprox import segments_csv
from .partition import region_table_csv

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PIPELINE = 4
EXIT_COVERAGE = 5

OUTPUT_ENV = "ETC_TRAFFIC_OUTPUT_DIR"
REFERENCE_TRANSITIONS = 536

log = logging.getLogger("etc_traffic")


def _output_dir(args, fallback: str) -> Path:
    chosen = args.output_dir or os.environ.get(OUTPUT_ENV) or fallback
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, text: str | bytes):
    data = text.encode("utf-8") if isinstance(text, str) else text
    path.write_bytes(data)
    log.info("wrote %s", path)


def _load_abstraction(path: str) -> Abstraction:
    return Abstraction.from_json(Path(path).read_text(encoding="utf-8"))


# -------------------------------------------------------------------------

def cmd_build(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _output_dir(args, cfg.output_dir)
    report = BuildReport()
    t0 = time.perf_counter()
    try:
        abst = build_abstraction(cfg, workers=args.workers, report=report)
    except StageError as exc:
        print(f"build failed in stage '{exc.stage}': {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    elapsed = time.perf_counter() - t0
    _write(out / "abstraction.json", abst.export("json"))
    _write(out / "graph.dot", abst.export("dot"))
    _write(out / "bounds.csv", abst.export("csv-bounds"))
    _write(out / "transitions.csv", abst.export("csv-transitions"))
    _write(out / "segments.csv", segments_csv(abst.segments))
    _write(out / "regions.csv", region_table_csv(abst.states, abst.cones))
    _write(out / "delta_certificate.json", abst.cert.to_json())
    if abst.system.n == 2:
        _write(out / "radial_sweep.csv", radial_sweep_csv(abst.mu, abst.times))
    manifest = {
        "config": str(args.config),
        "config_digest": abst.config_digest,
        "states": len(abst.states),
        "transitions": len(abst.transitions),
        "reference_transitions": REFERENCE_TRANSITIONS,
        "epsilon": abst.epsilon,
        "deltas": list(abst.cert.deltas),
        "elapsed_seconds": elapsed,
        "stage_seconds": report.timings,
        "warnings": report.warnings,
        "line_search": report.line_search,
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"{len(abst.states)} states, {len(abst.transitions)} transitions, "
          f"epsilon = {abst.epsilon:.6g} s ({elapsed:.1f} s) -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    abst = _load_abstraction(args.abstraction)
    x0 = np.array(args.x0, dtype=float)
    if x0.shape != (abst.system.n,):
        print(f"--x0 needs {abst.system.n} values", file=sys.stderr)
        return EXIT_USAGE
    if not np.any(x0):
        print("--x0 must be nonzero: the inter-event time at the origin is unbounded",
              file=sys.stderr)
        return EXIT_USAGE
    if args.duration < 0:
        print("--duration must be nonnegative", file=sys.stderr)
        return EXIT_USAGE
    out = _output_dir(args, ".")
    try:
        trace = simulate(abst, x0, args.duration)
    except RuntimeError as exc:
        # no event and no cap: the sample left the covered set
        print(f"classification failure: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    rep = validate_trace(abst, trace)
    _write(out / "trace.csv", trace_to_csv(trace))
    _write(out / "trace_validation.json", json.dumps(rep.to_dict(), indent=1) + "\n")
    print(f"{rep.events_checked} events, passed = {rep.passed}")
    if rep.coverage_violations:
        print(f"{len(rep.coverage_violations)} samples outside the covered set", file=sys.stderr)
        return EXIT_COVERAGE
    return EXIT_OK if rep.passed else EXIT_VIOLATION


def cmd_validate(args) -> int:
    abst = _load_abstraction(args.abstraction)
    out = _output_dir(args, ".")
    if args.samples <= 0:
        log.warning("no samples requested; the check passes vacuously")
    rep = monte_carlo_validate(abst, args.samples, args.seed, per_region=not args.global_samples)
    summary = rep.to_dict()
    _write(out / "validation_summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"samples per region = {args.samples}, passed = {rep.passed}, "
          f"worst margins lower {rep.worst_lower_margin:.3g} upper {rep.worst_upper_margin:.3g}")
    for v in rep.time_violations[:20]:
        print(f"  time violation in region {v[0]}: tau = {v[2]:.6g} not in {v[3]}",
              file=sys.stderr)
    for v in rep.transition_violations[:20]:
        print(f"  missing transition {v[0]} -> {v[1]}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_VIOLATION


def cmd_export(args) -> int:
    abst = _load_abstraction(args.abstraction)
    if args.format == "csv":
        out = _output_dir(args, ".")
        _write(out / "bounds.csv", abst.export("csv-bounds"))
        _write(out / "transitions.csv", abst.export("csv-transitions"))
        return EXIT_OK
    data = abst.export(args.format)
    if args.output:
        _write(Path(args.output), data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK


# -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                        help="worker processes for per-region jobs (default 1)")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    common.add_argument("--output-dir", default=argparse.SUPPRESS,
                        help=f"output directory (overrides ${OUTPUT_ENV} and the config)")

    p = argparse.ArgumentParser(
        prog="etc-traffic",
        description="Traffic models of homogeneous event-triggered control loops.",
        parents=[common],
    )
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", parents=[common], help="build an abstraction from a config")
    b.add_argument("config", help="TOML or JSON run configuration")
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("simulate", parents=[common],
                       help="simulate the loop and check the trace against an abstraction")
    s.add_argument("abstraction", help="abstraction.json from a build")
    s.add_argument("--x0", type=float, nargs="+", required=True, help="initial state")
    s.add_argument("--duration", type=float, required=True, help="simulated time in seconds")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", parents=[common],
                       help="Monte Carlo soundness check of an abstraction")
    v.add_argument("abstraction")
    v.add_argument("--samples", type=int, default=1000, help="samples per region")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--global", dest="global_samples", action="store_true",
                   help="draw --samples points over the whole covered set instead")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("export", parents=[common], help="re-export an abstraction")
    e.add_argument("abstraction")
    e.add_argument("--format", required=True,
                   choices=["json", "dot", "csv", "csv-bounds", "csv-transitions"])
    e.add_argument("--output", help="file to write (default stdout; csv writes two files)")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("workers", 1), ("verbose", False), ("output_dir", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
