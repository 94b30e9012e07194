"""Run every bundled config and print its headline metrics."""

import argparse
from pathlib import Path

from predcode.config import load_config
from predcode.experiments import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", help="config stems, e.g. dim_bars (default: all)")
    ap.add_argument("--out", type=Path, default=Path("runs"))
    args = ap.parse_args()
    paths = sorted((ROOT / "configs").glob("*.ini"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    for p in paths:
        cfg = load_config(p)
        rep = run_experiment(cfg, args.out / p.stem)
        print(f"{p.stem}: {rep.wall_time:.1f}s")
        for k, v in rep.metrics.items():
            print(f"  {k} = {v}")


if __name__ == "__main__":
    main()
