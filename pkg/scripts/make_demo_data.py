"""Write CSV files from one simulated loop so the real-data CLI modes can be tried.

    python scripts/make_demo_data.py [--out results/demo] [--seed 0]
"""
import argparse
from dataclasses import replace
from pathlib import Path

from biaslab.data import RngSeed, concat, write_csv
from biaslab.learners import save_scorecard
from biaslab.loop import LoopConfig, run_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/demo")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_loop(replace(LoopConfig(), seed=RngSeed(args.seed)))
    sp = res.split
    write_csv(concat([sp.train_accepts, sp.rejects]), out / "train.csv")
    write_csv(sp.validation, out / "validation.csv")
    write_csv(sp.holdout, out / "holdout.csv")
    save_scorecard(res.scorecard, out / "scorecard.json")
    for p in sorted(out.iterdir()):
        print(p)


if __name__ == "__main__":
    main()
