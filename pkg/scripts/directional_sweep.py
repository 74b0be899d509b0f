"""Compare two feedback methods' mean rank of the selected movie across master seeds.

    python3 scripts/directional_sweep.py --seeds 1,2,3,4,5 --out runs/sweep

Each seed runs synth, fixations, aoi-stats and experiment; the script prints one
line per seed and the number of seeds where the candidate ranks better.
"""
import argparse
import csv
import sys
from pathlib import Path

from gazefeedback.cli import main


def mean_ranks(metrics_csv: Path) -> dict[str, float]:
    with open(metrics_csv, newline="", encoding="utf-8") as fh:
        return {row["method"]: float(row["mean_rank"]) for row in csv.DictReader(fh)}


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="sweep")
    parser.add_argument("--seeds", default="1,2,3,4,5")
    parser.add_argument("--baseline", default="selected")
    parser.add_argument("--candidate", default="aoi_mu_minus_sigma")
    args, passthrough = parser.parse_known_args(argv)
    seeds = [int(s) for s in args.seeds.split(",")]
    wins = 0
    for seed in seeds:
        out = Path(args.out) / f"seed{seed}"
        for cmd in ("synth", "fixations", "aoi-stats", "experiment"):
            code = main([cmd, "--out", str(out), "--seed", str(seed),
                         "--methods", f"{args.baseline},{args.candidate}", *passthrough])
            if code:
                return code
        r = mean_ranks(out / "metrics.csv")
        better = r[args.candidate] < r[args.baseline]
        wins += better
        print(f"seed {seed}: {args.candidate} {r[args.candidate]:.3f}  {args.baseline} {r[args.baseline]:.3f}"
              f"  {'better' if better else 'not better'}")
    print(f"{args.candidate} ranks the selected movie better in {wins}/{len(seeds)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(run())
