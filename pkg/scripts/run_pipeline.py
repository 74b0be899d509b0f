"""Run every pipeline stage in order for one master seed.

    python3 scripts/run_pipeline.py --out runs/seed0 --seed 0 --jobs 2

Extra arguments (for example ``--config my.json`` or ``--methods selected,aoi_mu``)
are passed through to each stage.
"""
import argparse
import sys
import time

from gazefeedback.cli import COMMANDS, main


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="run")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--skip", default="", help="comma-separated stages to skip")
    args, passthrough = parser.parse_known_args(argv)
    skip = set(filter(None, args.skip.split(",")))
    t0 = time.perf_counter()
    for cmd in COMMANDS:
        if cmd in skip:
            continue
        t = time.perf_counter()
        code = main([cmd, "--out", args.out, "--seed", str(args.seed), *passthrough])
        print(f"# {cmd}: {time.perf_counter() - t:.1f} s", file=sys.stderr)
        if code:
            return code
    print(f"# total: {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(run())
