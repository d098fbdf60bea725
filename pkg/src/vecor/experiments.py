"""Desk-scale baseline-vs-contrastive experiment on gauss2.

Both arms share data, time and noise streams per seed and are sampled with
the same generation seed, so the comparison isolates the regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .evaluate import SweepResult, ab_compare, compute_metrics, nfe_sweep, reference_set
from .model import MlpVelocityField
from .sample import CallableField, SamplerConfig, generate
from .train import GAUSS2_OFFSET, GAUSS2_STD, state_shape
from .verify import CheckResult

DIRECTION_STEPS = 20_000
DIRECTION_SEEDS = (0, 1, 2)
LOW_NFE = 10


def direction_configs(steps: int = DIRECTION_STEPS, lam: float = 0.05, K: int = 1) -> tuple[RunConfig, RunConfig]:
    base = RunConfig(name="gauss2-baseline", steps=steps).replace(dataset={"name": "gauss2"})
    vec = base.replace(name="gauss2-vecor", vecor={
        "enabled": True, "lam": lam, "K": K,
        "perturb": {"operator": "channel_shuffle", "space": "velocity", "params": {}}})
    return base, vec.validate()


@dataclass
class DirectionOutcome:
    seeds: list
    final: dict  # arm -> per-seed sliced W2 at the configured sampler budget
    low_nfe: dict  # arm -> per-seed sliced W2 at LOW_NFE
    sweeps: dict = field(default_factory=dict)

    def median(self, table: dict, arm: str) -> float:
        return float(np.median(table[arm]))

    @property
    def final_ok(self) -> bool:
        return self.median(self.final, "vecor") <= self.median(self.final, "baseline")

    @property
    def low_nfe_ok(self) -> bool:
        return self.median(self.low_nfe, "vecor") <= self.median(self.low_nfe, "baseline")

    def summary(self) -> str:
        f = lambda table: f"vecor {self.median(table, 'vecor'):.4g} vs baseline {self.median(table, 'baseline'):.4g}"
        return f"median final sliced W2 {f(self.final)}; at NFE={LOW_NFE} {f(self.low_nfe)}"


def _model_from(cfg: RunConfig, params: np.ndarray) -> MlpVelocityField:
    model = MlpVelocityField(state_shape(cfg), cfg.model.hidden, cfg.model.n_freqs, cfg.model.activation)
    model.set_params(params)
    return model


def run_direction(steps: int = DIRECTION_STEPS, seeds: Sequence[int] = DIRECTION_SEEDS,
                  low_nfe: int = LOW_NFE, out_dir=None, n_eval: Optional[int] = None) -> DirectionOutcome:
    """Train both arms per seed, then score final models at the default and a low NFE."""
    base, vec = direction_configs(steps)
    if n_eval is not None:
        base = base.replace(eval={"n_gen": n_eval, "n_ref": n_eval})
        vec = vec.replace(eval={"n_gen": n_eval, "n_ref": n_eval})
    res_base, res_vec = ab_compare(base, vec, list(seeds), [steps], out_dir=out_dir)
    out = DirectionOutcome(list(seeds), {}, {}, {"baseline": res_base, "vecor": res_vec})
    for arm, cfg, res in (("baseline", base, res_base), ("vecor", vec, res_vec)):
        out.final[arm] = res.metric("sliced_w2", steps).tolist()
        low = []
        for s in seeds:
            ref = reference_set(cfg, cfg.eval.n_ref, s)
            sweep: SweepResult = nfe_sweep(_model_from(cfg, res.final_params[s]), [cfg.sampler.kind], [low_nfe], ref,
                                           [s], cfg.eval.n_gen, cfg.eval.n_projections, cfg.sampler.delta_clip)[0]
            low.append(float(sweep.metric("sliced_w2", low_nfe)[0]))
        out.low_nfe[arm] = low
    return out


def gauss2_velocity(x: np.ndarray, t: float) -> np.ndarray:
    """Exact marginal velocity of gauss2 (modes at (+-2, 0), std 0.5) under the linear path."""
    xs = x.reshape(len(x), 2)
    s2 = GAUSS2_STD ** 2
    var = t * t * s2 + (1.0 - t) ** 2
    logw, post = [], []
    for side in (-GAUSS2_OFFSET, GAUSS2_OFFSET):
        m = np.array([side, 0.0])
        logw.append(-((xs - t * m) ** 2).sum(axis=1) / (2.0 * var))
        post.append(m + t * s2 / var * (xs - t * m))
    logw = np.stack(logw)
    w = np.exp(logw - logw.max(axis=0))
    w /= w.sum(axis=0)
    mean_x = w[0][:, None] * post[0] + w[1][:, None] * post[1]
    return ((mean_x - xs) / (1.0 - t)).reshape(x.shape)


def swap_optimum(field, lam: float):
    """Population minimizer of the contrastive loss when the single negative swaps the two coordinates.

    The negative of a velocity is its channel-swapped copy, so its conditional
    mean is the swapped mean velocity and the minimizer is
    ``(v - lam * swap(v)) / (1 - lam)``.
    """
    def f(x, t):
        v = field(x, t)
        return (v - lam * v[:, ::-1]) / (1.0 - lam)
    return f


def exact_field_direction(lam: float = 0.05, nfes: Sequence[int] = (LOW_NFE, 50), seeds: Sequence[int] = DIRECTION_SEEDS,
                          n: int = 10_000) -> dict:
    """Median sliced W2 of the exact and the contrastive-optimal gauss2 fields per NFE.

    No training is involved, so this separates the bias of the regularized
    optimum from optimization and evaluation noise.
    """
    base, _ = direction_configs()
    out = {}
    for nfe in nfes:
        scfg = SamplerConfig(base.sampler.kind, nfe, base.sampler.w, base.sampler.delta_clip).validate()
        for arm, fn in (("baseline", gauss2_velocity), ("vecor", swap_optimum(gauss2_velocity, lam))):
            w2 = [compute_metrics(generate(CallableField(fn), (n, 2, 1, 1), scfg, s), reference_set(base, n, s),
                                  base.eval.n_projections, s).sliced_w2 for s in seeds]
            out[(arm, nfe)] = float(np.median(w2))
    return out


def check_ab_direction(steps: int = DIRECTION_STEPS, seeds: Sequence[int] = DIRECTION_SEEDS) -> CheckResult:
    out = run_direction(steps, seeds)
    return CheckResult("ab_direction", out.final_ok and out.low_nfe_ok, out.summary(),
                       {"final": out.final, "low_nfe": out.low_nfe})
