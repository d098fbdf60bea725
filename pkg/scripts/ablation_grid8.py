"""Operator x space ablation on grid8 plus a lambda sweep, written as one CSV.

    python3 scripts/ablation_grid8.py --steps 2000 --seeds 0,1 --out runs/ablation.csv
"""

import argparse
import csv
import sys
import time

import numpy as np

from vecor.evaluate import compute_metrics, reference_set
from vecor.perturb import ABLATION_OPERATORS, ABLATION_SPACES
from vecor.sample import SamplerConfig, generate
from vecor.train import fit, state_shape
from vecor.verify import ABLATION_LAMBDAS, ablation_cell_config

COLUMNS = ("operator", "space", "lam", "K", "seed", "steps", "final_fm", "sliced_w2", "energy_distance", "seconds")


def run_cell(cfg, n_eval):
    t0 = time.perf_counter()
    state = fit(cfg)
    ref = reference_set(cfg, n_eval, cfg.seed)
    scfg = SamplerConfig(cfg.sampler.kind, cfg.sampler.nfe, cfg.sampler.w, cfg.sampler.delta_clip).validate()
    gen = generate(state.model, (n_eval, *state_shape(cfg)), scfg, cfg.seed)
    m = compute_metrics(gen, ref, cfg.eval.n_projections, cfg.seed)
    fm = state.log[-1].fm_term if state.log else float("nan")
    return (fm, m.sliced_w2, m.energy_distance, time.perf_counter() - t0)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seeds", default="0")
    p.add_argument("--n-eval", type=int, default=2000)
    p.add_argument("--out", help="CSV path (default: stdout)")
    args = p.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    cells = [(op.value, sp.name.lower(), 0.05) for op in ABLATION_OPERATORS for sp in ABLATION_SPACES]
    cells += [("channel_shuffle", "velocity", lam) for lam in ABLATION_LAMBDAS]
    rows = []
    for op, space, lam in cells:
        for seed in seeds:
            cfg = ablation_cell_config(op, space, lam=lam, steps=args.steps, seed=seed)
            fm, w2, ed, secs = run_cell(cfg, args.n_eval)
            rows.append((op, space, lam, cfg.vecor.K, seed, args.steps, fm, w2, ed, round(secs, 2)))
            print(f"{op:>16}/{space:<8} lam={lam:<5} seed={seed}  sliced W2 {w2:.4g}  [{secs:.1f}s]", file=sys.stderr)
    w2 = np.array([r[7] for r in rows])
    print(f"{len(rows)} runs; sliced W2 range {w2.min():.4g} .. {w2.max():.4g}", file=sys.stderr)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()


if __name__ == "__main__":
    main()
