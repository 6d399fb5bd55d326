"""Command line entry point: ``kfpbismut run|validate|list-systems|list-experiments``.

Exit status: 0 when every asserted check passes, 2 when a statistical check
fails, 1 on configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import EXPERIMENTS, SYSTEMS, ConfigError, ExperimentConfig, load_config
from .experiments import ExperimentResult, Row, run_experiment
from .integrate import ExplosionError

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
CSV_FIELDS = ("experiment", "quantity", "value", "stderr", "n", "ess", "passed")


def _fmt(v) -> str:
    return format(float(v), ".17g")


def rows_to_csv(rows: Sequence[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        passed = "" if r.passed is None else str(bool(r.passed)).lower()
        w.writerow([r.experiment, r.quantity, _fmt(r.value), _fmt(r.stderr), int(r.n),
                    _fmt(r.ess), passed])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[Row]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        passed = None if rec["passed"] == "" else rec["passed"] == "true"
        out.append(Row(rec["experiment"], rec["quantity"], float(rec["value"]),
                       float(rec["stderr"]), int(rec["n"]), float(rec["ess"]), passed))
    return out


def emit(result: ExperimentResult, prefix: str | Path, fmt: str = "csv+json",
         config: Optional[ExperimentConfig] = None) -> list[Path]:
    """Write ``<prefix>.csv`` and/or ``<prefix>.json``; returns the written paths."""
    if not result.rows:
        raise ValueError("no results to emit")
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv+json", "csv"):
        path = prefix.with_suffix(".csv")
        path.write_text(rows_to_csv(result.rows))
        written.append(path)
    if fmt in ("csv+json", "json"):
        doc = {
            "config": config.echo() if config else None,
            "master_seed": config.mc.master_seed if config else None,
            "passed": result.passed,
            "rows": [{k: getattr(r, k) for k in CSV_FIELDS} for r in result.rows],
            "reports": [r.to_dict() for r in result.reports],
        }
        path = prefix.with_suffix(".json")
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
        written.append(path)
    return written


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg)
    prefix = args.output or cfg.output_path
    for path in emit(result, prefix, cfg.output_format, cfg):
        print(f"wrote {path}")
    failed = [r for r in result.rows if r.passed is False]
    for r in failed:
        print(f"FAIL {r.experiment} {r.quantity} value={_fmt(r.value)} stderr={_fmt(r.stderr)}",
              file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: {cfg.experiment['kind']} on {cfg.system['name']}")
    return EXIT_OK


def _cmd_list(table: dict) -> int:
    width = max(map(len, table))
    for name, desc in table.items():
        print(f"{name:<{width}}  {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kfpbismut", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="output prefix (overrides [output] path)")
    val = sub.add_parser("validate", help="parse and validate a config without running it")
    val.add_argument("config")
    sub.add_parser("list-systems", help="show the built-in systems")
    sub.add_parser("list-experiments", help="show the experiment kinds")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "list-systems":
            return _cmd_list(SYSTEMS)
        return _cmd_list(EXPERIMENTS)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (ValueError, ExplosionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
