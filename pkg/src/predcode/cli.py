"""``predcode`` command line.

Exit codes: 0 success, 1 runtime (numerical) failure, 2 config or parse
error, 3 protocol validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import archproto
from .config import ConfigError, load_config
from .core import CorruptWeightsError, load_weights, split_seeds
from .experiments import run_experiment
from .io import export_rows_as_pgm

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_PROTOCOL = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"predcode: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg = replace(cfg, out_dir=Path(args.out_dir))
    if args.trials < 1:
        raise ConfigError("--trials", "must be >= 1")
    if args.trials == 1:
        jobs = [(cfg, cfg.out_dir)]
    else:
        seeds = split_seeds(cfg.seed, args.trials)
        jobs = [(replace(cfg, seed=s), cfg.out_dir / f"trial_{i:03d}") for i, s in enumerate(seeds)]
    workers = min(len(jobs), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(lambda job: run_experiment(*job), jobs))
    for (c, out), rep in zip(jobs, reports):
        print(f"{rep.experiment} seed={rep.seed} -> {out} ({rep.wall_time:.2f}s)")
        print("  metrics: " + json.dumps(rep.metrics, sort_keys=True))
        print(f"  artifacts: {len(rep.artifacts)} files")
    return EXIT_OK


def cmd_arch(args) -> int:
    a = archproto.load_architecture(args.source)
    if args.action == "params":
        print(archproto.param_report(a), end="")
        return EXIT_OK
    if args.action == "emit":
        print(archproto.format_architecture(a), end="")
        return EXIT_OK
    archproto.link_table(a)
    report = archproto.validate_rb_protocol(a)
    print(report, end="")
    return EXIT_OK if report.passed else EXIT_PROTOCOL


def _shape(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)[xX](\d+)", text)
    if not m or int(m.group(1)) == 0 or int(m.group(2)) == 0:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def cmd_export(args) -> int:
    W = load_weights(args.weights)
    h, w = args.shape
    if W.shape[1] != h * w:
        raise ConfigError("--shape", f"{h}x{w} = {h * w} pixels but rows have {W.shape[1]} values")
    out = Path(args.out) if args.out else Path(args.weights).with_suffix("")
    stem = args.stem or Path(args.weights).stem
    files = export_rows_as_pgm(W, (h, w), out, stem)
    print(f"wrote {len(files)} images to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="predcode", description="Predictive coding experiments and architecture tools.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from an INI config")
    r.add_argument("config")
    r.add_argument("--trials", type=int, default=1, help="independent seeds derived from the config seed")
    r.add_argument("--out-dir", help="override [experiment] out_dir")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("arch", help="architecture graphs: protocol check, parameter table, text form")
    a.add_argument("action", choices=("validate", "params", "emit"))
    a.add_argument("source", help=f"preset ({', '.join(archproto.PRESETS)}) or architecture file")
    a.set_defaults(func=cmd_arch)

    e = sub.add_parser("export", help="write each weight row as a PGM image")
    e.add_argument("weights")
    e.add_argument("--shape", type=_shape, required=True, help="image shape HxW")
    e.add_argument("--out", help="output directory (default: next to the weights file)")
    e.add_argument("--stem", help="file name prefix (default: weights file stem)")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, archproto.ArchError, CorruptWeightsError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"{exc.filename or ''}: {exc.strerror or exc}")
        return EXIT_CONFIG
    except Exception as exc:  # numerical or other runtime failure
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
