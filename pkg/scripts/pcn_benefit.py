"""Train plain, global and local PCNs over several seeds and tally where feedback helps."""

import argparse
from dataclasses import replace
from pathlib import Path
import tempfile

from predcode.config import load_config
from predcode.experiments import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=ROOT / "configs" / "pcn_classify.ini")
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    cfg = load_config(args.config)
    wins = 0
    print(f"{'seed':>4} {'plain':>7} {'global':>7} {'local':>7}")
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(args.seeds):
            m = run_experiment(replace(cfg, seed=seed), Path(tmp) / str(seed)).metrics
            acc = [m[f"{k}_accuracy"] for k in ("plain", "global", "local")]
            wins += max(acc[1:]) > acc[0]
            print(f"{seed:>4} " + " ".join(f"{a:7.3f}" for a in acc))
    print(f"a predictive mode beat plain on {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
