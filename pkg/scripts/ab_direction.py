"""Baseline vs contrastive flow matching on gauss2: final quality and low-NFE quality.

    python3 scripts/ab_direction.py --steps 20000 --seeds 0,1,2 --out runs/direction
"""

import argparse
import json
import time
from pathlib import Path

from vecor.evaluate import sweep_csv
from vecor.experiments import DIRECTION_SEEDS, DIRECTION_STEPS, LOW_NFE, exact_field_direction, run_direction


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=DIRECTION_STEPS)
    p.add_argument("--seeds", default=",".join(map(str, DIRECTION_SEEDS)))
    p.add_argument("--low-nfe", type=int, default=LOW_NFE)
    p.add_argument("--n-eval", type=int, help="override generated/reference set size")
    p.add_argument("--out", help="directory for checkpoints, sweep CSV and summary JSON")
    p.add_argument("--exact", action="store_true", help="score the exact and regularized-optimal fields instead of training")
    args = p.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    if args.exact:
        table = exact_field_direction(nfes=(args.low_nfe, 50), seeds=seeds)
        for (arm, nfe), w2 in sorted(table.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            print(f"nfe={nfe:<4} {arm:<8} median sliced W2 {w2:.5f}")
        return
    t0 = time.perf_counter()
    out = run_direction(args.steps, seeds, args.low_nfe, out_dir=args.out, n_eval=args.n_eval)
    secs = time.perf_counter() - t0
    print(out.summary())
    for arm in ("baseline", "vecor"):
        print(f"  {arm:<8} final {out.final[arm]}  nfe={args.low_nfe} {out.low_nfe[arm]}")
    verdict = "holds" if out.final_ok and out.low_nfe_ok else "does not hold"
    print(f"direction {verdict} ({secs / 60:.1f} min)")
    if args.out:
        root = Path(args.out)
        root.mkdir(parents=True, exist_ok=True)
        (root / "direction.csv").write_text(sweep_csv([out.sweeps["baseline"], out.sweeps["vecor"]]))
        (root / "direction.json").write_text(json.dumps(
            {"steps": args.steps, "seeds": seeds, "low_nfe": args.low_nfe, "final": out.final,
             "low_nfe_w2": out.low_nfe, "final_ok": out.final_ok, "low_nfe_ok": out.low_nfe_ok,
             "seconds": secs}, indent=2) + "\n")


if __name__ == "__main__":
    main()
