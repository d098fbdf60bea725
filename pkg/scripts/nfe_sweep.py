"""Sliced W2 against sampler budget for a trained config, one curve per sampler.

    python3 scripts/nfe_sweep.py configs/gauss2-vecor.json --samplers euler,heun2,euler_maruyama --svg
"""

import argparse
import sys

from vecor.cli import main as vecor_main


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--values", default="2,5,10,25,50,100")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--samplers", default="euler,heun2,euler_maruyama")
    p.add_argument("--checkpoint", help="reuse a trained checkpoint instead of training")
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.add_argument("--svg", action="store_true")
    args = p.parse_args()

    # heun2 spends two evaluations per step, so odd budgets are dropped for it
    values = [int(v) for v in args.values.split(",")]
    kinds = args.samplers.split(",")
    if "heun2" in kinds and any(v % 2 for v in values):
        values = [v for v in values if v % 2 == 0]
        print(f"heun2 needs even budgets; sweeping {values}", file=sys.stderr)
    argv = ["sweep", args.config, "--axis", "nfe", "--values", ",".join(map(str, values)),
            "--seeds", args.seeds, "--samplers", args.samplers]
    for flag in ("checkpoint", "steps", "out"):
        if getattr(args, flag) is not None:
            argv += [f"--{flag}", str(getattr(args, flag))]
    if args.svg:
        argv.append("--svg")
    sys.exit(vecor_main(argv))


if __name__ == "__main__":
    main()
