"""Command line entry point: ``stochobs <pipeline> --config cfg.json --out runs``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PIPELINES, ConfigError, ExperimentConfig
from .pipelines import emit_report, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochobs", description="Observability and null-control experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        s = sub.add_parser(name, help=f"run the {name} pipeline")
        s.add_argument("--config", type=Path, help="JSON configuration document")
        s.add_argument("--out", type=Path, default=Path("runs"), help="parent directory for run directories")
        s.add_argument("--seed", type=int, help="override the configured seed")
        s.add_argument("--threads", type=int, default=1, help="threads for path sampling")
        s.add_argument("--report", action="store_true", help="also write report.md / report.json")
    r = sub.add_parser("report", help="summarise a finished run directory")
    r.add_argument("run_dir", type=Path)
    return p


def load_config(path: Path | None, pipeline: str, seed: int | None) -> ExperimentConfig:
    doc = {} if path is None else json.loads(Path(path).read_text(encoding="utf-8"))
    doc["pipeline"] = pipeline
    if seed is not None:
        doc["seed"] = seed
    return ExperimentConfig.from_dict(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            doc = emit_report(args.run_dir)
            print(Path(args.run_dir) / doc["markdown"])
            return 0
        if args.threads < 1:
            raise ConfigError("threads", "must be at least 1")
        cfg = load_config(args.config, args.command, args.seed)
        record = run_pipeline(cfg, args.out, threads=args.threads)
        if args.report:
            emit_report(record)
    except (ConfigError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(record.run_dir)
    print(json.dumps(record.summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
