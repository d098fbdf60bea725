"""Command line entry point: ``vecor {train,sample,eval,sweep,verify}``.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .artifacts import Manifest, csv_text, write_text_atomic
from .config import ConfigError, RunConfig, load_config
from .core import NumericalError, ParameterError, VecorError, load_checkpoint, load_grid, save_grid
from .evaluate import SWEEP_COLUMNS, ab_compare, compute_metrics, nfe_sweep, reference_set, sweep_csv
from .model import MlpVelocityField
from .sample import SamplerConfig, generate
from .train import fit, state_shape

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def out_root(args, cfg: RunConfig | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if os.environ.get("VECOR_OUT"):
        return Path(os.environ["VECOR_OUT"])
    return Path(cfg.out_dir if cfg is not None else "runs")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg.validate()


def load_model(checkpoint: Path, cfg: RunConfig) -> MlpVelocityField:
    digest, params = load_checkpoint(checkpoint)
    if digest != cfg.hash():
        raise ConfigError(f"{checkpoint}: checkpoint was written by a different config (hash {digest[:12]} vs {cfg.hash()[:12]})")
    model = MlpVelocityField(state_shape(cfg), cfg.model.hidden, cfg.model.n_freqs, cfg.model.activation)
    model.set_params(params)
    return model


def _checkpoint_config(args, checkpoint: Path) -> RunConfig:
    path = Path(args.config) if args.config else checkpoint.parent / "config.json"
    return load_config(path).validate()


def cmd_train(args) -> int:
    cfg = _load(args)
    state = fit(cfg, out_dir=out_root(args, cfg))
    rdir = out_root(args, cfg) / cfg.name
    last = state.log[-1] if state.log else None
    summary = f"trained {state.step} steps -> {rdir}"
    if last is not None:
        summary += f" (final total {last.total:.6g}, fm {last.fm_term:.6g})"
    print(summary)
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(2, "no such checkpoint", str(ckpt))
    cfg = _checkpoint_config(args, ckpt)
    scfg = SamplerConfig(args.sampler or cfg.sampler.kind, args.nfe if args.nfe is not None else cfg.sampler.nfe,
                         cfg.sampler.w, cfg.sampler.delta_clip).validate()
    model = load_model(ckpt, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    n = args.n or cfg.eval.n_gen
    samples = generate(model, (n, *state_shape(cfg)), scfg, seed)
    dest = Path(args.output) if args.output else ckpt.parent / f"samples-{scfg.kind}-nfe{scfg.nfe}-seed{seed}.grid"
    save_grid(dest, samples)
    manifest = Manifest(cfg.hash())
    manifest.artifacts["samples"] = dest.name
    manifest.artifacts["checkpoint"] = str(ckpt)
    manifest.extra["sampler"] = {"kind": scfg.kind, "nfe": scfg.nfe, "seed": seed, "n": n}
    manifest.stage("sample", "ok")
    manifest.write(dest.with_suffix(".manifest.json"))
    print(f"wrote {n} samples to {dest}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config).validate()
    gen = load_grid(args.samples)
    seed = cfg.seed if args.seed is None else args.seed
    ref = reference_set(cfg, args.n_ref or cfg.eval.n_ref, seed)
    m = compute_metrics(gen, ref, cfg.eval.n_projections, seed)
    row = ("eval", 0, seed, m.sliced_w2, m.energy_distance, m.mean_gap_norm, m.n_gen, m.n_ref, "", "")
    text = csv_text(SWEEP_COLUMNS, [row])
    if args.output:
        write_text_atomic(args.output, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.values:
        raise ParameterError("--values needs at least one entry")
    cfg = _load(args)
    seeds = args.seeds or [cfg.seed]
    root = out_root(args, cfg) / f"{cfg.name}-sweep-{args.axis}"
    root.mkdir(parents=True, exist_ok=True)
    write_text_atomic(root / "config.json", cfg.to_json())
    manifest = Manifest(cfg.hash())
    manifest.artifacts["config"] = "config.json"
    if args.axis == "nfe":
        if args.checkpoint:
            model = load_model(Path(args.checkpoint), cfg)
        else:
            model = fit(cfg, out_dir=root).model
        ref = reference_set(cfg, cfg.eval.n_ref, seeds[0])
        kinds = args.samplers.split(",") if args.samplers else [cfg.sampler.kind]
        results = nfe_sweep(model, kinds, args.values, ref, seeds, cfg.eval.n_gen, cfg.eval.n_projections,
                            cfg.sampler.delta_clip)
        series = {f"{r.sampler}": (r.values(), np.median(r.metric("sliced_w2"), axis=1)) for r in results}
    else:
        base = cfg.replace(vecor={"enabled": False}, name=f"{cfg.name}-baseline")
        vec = cfg.replace(vecor={"enabled": True}, name=f"{cfg.name}-vecor")
        results = list(ab_compare(base, vec.validate(), seeds, args.values, out_dir=root))
        series = {"baseline": (results[0].values(), np.median(results[0].metric("sliced_w2"), axis=1)),
                  "vecor": (results[1].values(), np.median(results[1].metric("sliced_w2"), axis=1))}
        for r, arm in zip(results, ("baseline", "vecor")):
            r.sampler = f"{r.sampler}:{arm}"
    write_text_atomic(root / "sweep.csv", sweep_csv(results))
    manifest.artifacts["sweep"] = "sweep.csv"
    if args.svg:
        from .plotting import line_chart_svg

        write_text_atomic(root / "sweep.svg", line_chart_svg(
            series, title=f"sliced W2 vs {args.axis}", xlabel=args.axis, ylabel="median sliced W2", logx=args.axis == "nfe"))
        manifest.artifacts["chart"] = "sweep.svg"
    manifest.stage("sweep", "ok", axis=args.axis, values=args.values, seeds=seeds)
    manifest.write(root / "manifest.json")
    print(f"wrote {root / 'sweep.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    results = verify.run_all(fault=args.inject_fault, gradient_instances=args.gradient_instances)
    if args.with_experiments:
        from .experiments import check_ab_direction

        results.append(verify._timed(check_ab_direction))
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  [{r.seconds:.1f}s]")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vecor", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a velocity field from a JSON run config")
    t.add_argument("config")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output root (default: $VECOR_OUT or config out_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--config", help="run config (default: config.json next to the checkpoint)")
    s.add_argument("--sampler", choices=["euler", "heun2", "euler_maruyama"])
    s.add_argument("--nfe", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int, help="number of samples")
    s.add_argument("--output", help="grid dump path")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="score a sample dump against held-out data")
    e.add_argument("samples")
    e.add_argument("--config", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--n-ref", type=int)
    e.add_argument("--output", help="write the metric CSV here as well")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="metric curves over NFE or training steps")
    w.add_argument("config")
    w.add_argument("--axis", choices=["nfe", "step"], required=True)
    w.add_argument("--values", type=_int_list, required=True)
    w.add_argument("--seeds", type=_int_list)
    w.add_argument("--samplers", help="comma-separated sampler kinds for --axis nfe")
    w.add_argument("--checkpoint", help="skip training for --axis nfe")
    w.add_argument("--steps", type=int)
    w.add_argument("--out")
    w.add_argument("--svg", action="store_true", help="also write a line chart")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run the oracle self-checks")
    v.add_argument("--inject-fault", choices=["grad"], help=argparse.SUPPRESS)
    v.add_argument("--gradient-instances", type=int, default=100)
    v.add_argument("--with-experiments", action="store_true", help="also run the desk-scale A/B experiment (minutes)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VecorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
