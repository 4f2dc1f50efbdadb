"""Train ST, SAT and RAT on one dataset and print a clean/FGSM/PGD/CW table.

    python3 scripts/run_trends.py --dataset moons --out runs/moons
    python3 scripts/run_trends.py --dataset mnist --seeds 11,12,13
"""

import argparse
import csv
import time
from pathlib import Path

from rat.config import parse_config, stream_seed
from rat.evaluation import evaluate
from rat.train import load_datasets, train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset", choices=["moons", "mnist"], default="moons")
    ap.add_argument("--seeds", default="11", help="comma-separated experiment seeds")
    ap.add_argument("--out", default=None, help="directory for per-run outputs and trends.csv")
    args = ap.parse_args()

    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        for method in ("st", "sat", "rat"):
            cfg = parse_config(CONFIGS / f"{args.dataset}_{method}.ini", seed_override=seed)
            train_set, test_set = load_datasets(cfg)
            run_dir = Path(args.out) / f"{method}_seed{seed}" if args.out else None
            t0 = time.perf_counter()
            model = train(cfg, run_dir, train_set, test_set).model
            secs = time.perf_counter() - t0
            rep = evaluate(model, test_set, cfg.attack, stream_seed(seed, "eval"), cfg.eval.pgd_iterations)
            row = [seed, method, rep.clean_accuracy, rep.robust_accuracy["fgsm"],
                   rep.robust_accuracy["pgd"], rep.robust_accuracy["cw"], secs]
            rows.append(row)
            print(f"seed {seed:>3} {method:>3}  clean {row[2]:.3f}  fgsm {row[3]:.3f}  "
                  f"pgd {row[4]:.3f}  cw {row[5]:.3f}  ({secs:.1f}s)", flush=True)
    if args.out:
        with open(Path(args.out) / "trends.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["seed", "method", "clean", "fgsm", "pgd", "cw", "train_s"])
            w.writerows([r[:2] + [f"{v:.4f}" for v in r[2:]] for r in rows])


if __name__ == "__main__":
    main()
