"""Self-verification suite: oracle checks over every module.

Each check returns a :class:`CheckResult` carrying the measured quantity,
so callers can both print a report and assert on the raw numbers.
Thresholds are fixed module constants.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ConfigError, RunConfig
from .core import BatchGrid, SeededRng, Space
from .interpolant import gaussian_score, gaussian_velocity, linear_schedule, score_from_velocity
from .model import MlpVelocityField, TabularVelocityField
from .objective import IllConditionedError, VecorConfig, closed_form_optimum, validate_config, vecor_grad, vecor_loss
from .perturb import (
    ABLATION_OPERATORS,
    ABLATION_SPACES,
    BlurParams,
    CropResizeParams,
    JitterParams,
    NegativeCandidateSet,
    NoiseParams,
    channel_shuffle,
    color_jitter,
    crop_resize,
    cutmix,
    gaussian_blur,
    gaussian_kernel,
    gaussian_noise,
    noise_scales,
    random_derangement,
)
from .sample import CallableField, SamplerConfig, euler_maruyama_sde, euler_ode, heun2_ode, sde_time_grid
from .train import fit, fit_frozen

FIXED_POINT_TOL = 1e-6
FIXED_POINT_LAMBDAS = (0.01, 0.05, 0.2)
FIXED_POINT_KS = (1, 2, 4)
GRAD_REL_TOL = 1e-4
GRAD_FD_STEP = 1e-5
SCORE_TOL = 1e-10
HEUN_RATIO = (3.5, 4.5)
EULER_RATIO = (1.8, 2.2)
BLUR_SUM_TOL = 1e-15
CONST_TOL = 1e-12

# (lambda, K) pairs with lambda*K >= 1 (or lambda >= 1); every one must be refused.
ILL_POSED_GRID = [
    (0.1, 10), (0.1, 11), (0.1, 15), (0.2, 5), (0.2, 6), (0.2, 9),
    (0.25, 4), (0.25, 5), (0.34, 3), (0.4, 3), (0.5, 2), (0.5, 3),
    (0.6, 2), (0.75, 2), (0.9, 2), (0.99, 2), (0.05, 20), (0.05, 25),
    (1.0, 1), (1.5, 1),
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0


def _timed(fn: Callable[..., CheckResult], *args, **kwargs) -> CheckResult:
    t0 = time.perf_counter()
    try:
        res = fn(*args, **kwargs)
    except Exception as exc:  # a crashing check is a failing check
        res = CheckResult(fn.__name__.removeprefix("check_"), False, f"raised {type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def random_candidates(rng: SeededRng, shape, K: int, spread: float = 1.0) -> NegativeCandidateSet:
    pos = BatchGrid(rng.normal(shape), Space.VELOCITY)
    negs = tuple(BatchGrid(spread * rng.normal(shape), Space.VELOCITY) for _ in range(K))
    eps = BatchGrid(rng.normal(shape), Space.NOISE)
    return NegativeCandidateSet(pos, negs, eps, rng.uniform(0.0, 1.0, shape[0]))


# --- objective --------------------------------------------------------------

def check_fixed_point(seed: int = 0, shape=(8, 2, 1, 1)) -> CheckResult:
    """Tabular field + gradient descent lands on the closed-form optimum."""
    rng = SeededRng(seed, "fixed-point")
    worst, worst_steps, cells = 0.0, 0, []
    for lam in FIXED_POINT_LAMBDAS:
        for K in FIXED_POINT_KS:
            vcfg = VecorConfig(lam, K)
            cands = random_candidates(rng, shape, K)
            target = closed_form_optimum(cands, vcfg)
            model = TabularVelocityField(shape)
            xt = BatchGrid(np.zeros(shape))
            steps, res = fit_frozen(model, xt, 0.5, cands, vcfg, lr=0.1, tol=FIXED_POINT_TOL, target=target)
            cells.append((lam, K, steps, res))
            worst = max(worst, res)
            worst_steps = max(worst_steps, steps)
    ok = worst < FIXED_POINT_TOL
    return CheckResult("fixed_point", ok, f"max residual {worst:.3g} (tol {FIXED_POINT_TOL:g}), max steps {worst_steps}",
                       {"residual": worst, "max_steps": worst_steps, "cells": cells})


def check_well_posedness() -> CheckResult:
    """Every ill-posed (lambda, K) is refused by the objective and by run configs."""
    missed = []
    for lam, K in ILL_POSED_GRID:
        try:
            validate_config(VecorConfig(lam, K))
            missed.append((lam, K, "objective"))
        except IllConditionedError:
            pass
        cfg = RunConfig(steps=1).replace(vecor={"enabled": True, "lam": lam, "K": K})
        try:
            cfg.validate()
            missed.append((lam, K, "config"))
        except ConfigError:
            pass
    ok = not missed
    return CheckResult("well_posedness", ok, f"{len(ILL_POSED_GRID) - len(missed)}/{len(ILL_POSED_GRID)} ill-posed pairs refused",
                       {"missed": missed, "n_pairs": len(ILL_POSED_GRID)})


def _small_cfg(steps=40, **vecor) -> RunConfig:
    return RunConfig(name="reduction", steps=steps, batch_size=16).replace(
        model={"hidden": [16, 16]}, vecor=vecor)


def check_reduction_identity(seed: int = 0, steps: int = 40) -> CheckResult:
    """A lambda=0 contrastive run matches the baseline bit for bit."""
    traces = {}
    for arm, vecor in (("baseline", {"enabled": False}), ("lambda0", {"enabled": True, "lam": 0.0, "K": 1})):
        grads = []
        cfg = _small_cfg(steps, **vecor).replace(seed=seed)
        state = fit(cfg, on_step=lambda s: grads.append(s.last_grad.copy()), allow_zero_lambda=True)
        traces[arm] = (state, grads)
    (sa, ga), (sb, gb) = traces["baseline"], traces["lambda0"]
    same_loss = [a.total for a in sa.log] == [b.total for b in sb.log] and \
        [a.fm_term for a in sa.log] == [b.fm_term for b in sb.log]
    same_grad = all(np.array_equal(a, b) for a, b in zip(ga, gb)) and len(ga) == len(gb)
    same_params = np.array_equal(sa.model.params, sb.model.params)
    ok = same_loss and same_grad and same_params
    return CheckResult("reduction_identity", ok,
                       f"losses {'==' if same_loss else '!='}, gradients {'==' if same_grad else '!='}, "
                       f"params {'==' if same_params else '!='} over {steps} steps",
                       {"losses": same_loss, "grads": same_grad, "params": same_params})


def pipeline_gradient_error(rng: SeededRng, fault: Optional[str] = None, coords: Optional[int] = None) -> tuple[float, float]:
    """Norm-wise and worst coordinate relative error of backprop vs central differences.

    One random instance: MLP of width <= 32, random state shape, random
    candidate set and contrastive weight. Coordinate errors use a 1e-6
    absolute floor in the denominator.
    """
    width = int(rng.integers(4, 32))
    depth = int(rng.integers(1, 2))
    shape = [(2, 1, 1), (3, 1, 1), (2, 2, 2)][int(rng.integers(0, 2))]
    B = int(rng.integers(1, 4))
    K = int(rng.integers(1, 3))
    lam = float(rng.uniform(0.01, 0.9 / K))
    model = MlpVelocityField(shape, [width] * depth, n_freqs=int(rng.integers(1, 4)))
    model.set_params(0.5 * rng.normal(model.n_params))
    xt = BatchGrid(rng.normal((B, *shape)))
    t = rng.uniform(0.0, 1.0, B)
    cands = random_candidates(rng, (B, *shape), K)
    vcfg = VecorConfig(lam, K)

    pred = model.forward(xt, t)
    g = model.backward(xt, t, vecor_grad(pred, cands, vcfg))
    if fault == "grad":
        g = g * (1.0 + 1e-3) + 1e-3
    base = model.params.copy()
    idx = np.arange(model.n_params) if coords is None else rng.permutation(model.n_params)[:coords]
    fd = np.empty(len(idx))
    for n, i in enumerate(idx):
        p = base.copy()
        p[i] = base[i] + GRAD_FD_STEP
        model.set_params(p)
        up = vecor_loss(model.forward(xt, t), cands, vcfg).total
        p[i] = base[i] - GRAD_FD_STEP
        model.set_params(p)
        down = vecor_loss(model.forward(xt, t), cands, vcfg).total
        fd[n] = (up - down) / (2.0 * GRAD_FD_STEP)
    model.set_params(base)
    ga = g[idx]
    norm_err = float(np.linalg.norm(ga - fd) / max(np.linalg.norm(ga), np.linalg.norm(fd), 1e-12))
    coord_err = float(np.max(np.abs(ga - fd) / np.maximum(np.maximum(np.abs(ga), np.abs(fd)), 1e-6)))
    return norm_err, coord_err


def check_gradients(n_instances: int = 100, seed: int = 0, fault: Optional[str] = None) -> CheckResult:
    rng = SeededRng(seed, "gradcheck")
    worst = 0.0
    for _ in range(n_instances):
        norm_err, _ = pipeline_gradient_error(rng, fault)
        worst = max(worst, norm_err)
    ok = worst < GRAD_REL_TOL
    return CheckResult("gradient_fd", ok, f"max relative error {worst:.3g} over {n_instances} instances (tol {GRAD_REL_TOL:g})",
                       {"max_rel_err": worst, "n": n_instances})


# --- perturbation operators -------------------------------------------------

def _channel_index_grid(B, C, H=2, W=2) -> BatchGrid:
    return BatchGrid(np.broadcast_to(np.arange(C, dtype=np.float64)[None, :, None, None], (B, C, H, W)))


def check_operators(trials: int = 1000, seed: int = 0) -> CheckResult:
    failures = []
    # channel shuffle: no channel keeps its slot
    for C in range(2, 9):
        z = _channel_index_grid(4, C)
        for s in range(trials):
            out = channel_shuffle(z, SeededRng(seed + s, "shuffle"))
            if np.any(out.data[:, :, 0, 0] == np.arange(C)[None, :]):
                failures.append(f"channel_shuffle C={C} seed={seed + s}")
                break
    # cutmix pairing: derangement for every batch size
    for B in range(2, 9):
        for s in range(trials):
            perm = random_derangement(B, SeededRng(seed + s, "cutmix"))
            if np.any(perm == np.arange(B)) or sorted(perm) != list(range(B)):
                failures.append(f"cutmix derangement B={B} seed={seed + s}")
                break
    # blur kernel normalization and constant preservation
    for k in (1, 3, 5, 7):
        for sigma in (1.0, 1.5, 3.0):
            kern = gaussian_kernel(k, sigma)
            if abs(kern.sum() - 1.0) > BLUR_SUM_TOL:
                failures.append(f"blur kernel k={k} sigma={sigma} sums to 1{kern.sum() - 1.0:+.3g}")
    const = BatchGrid(np.full((2, 3, 9, 9), 0.37))
    if np.abs(gaussian_blur(const, BlurParams()).data - 0.37).max() > CONST_TOL:
        failures.append("blur does not fix constants")
    # noise: the max-std sample is untouched
    rng = SeededRng(seed, "noise-op")
    z = BatchGrid(rng.normal((5, 3, 4, 4)) * np.array([0.5, 2.0, 1.0, 0.1, 1.5])[:, None, None, None])
    gamma = noise_scales(z, NoiseParams())
    imax = int(np.argmax(z.flat().std(axis=1)))
    out = gaussian_noise(z, NoiseParams(), rng)
    if gamma[imax] != 0.0 or not np.array_equal(out.data[imax], z.data[imax]):
        failures.append("noise perturbs the max-std sample")
    # jitter with unit factors is the identity in every order
    unit = {"brightness": 1.0, "contrast": 1.0, "saturation": 1.0}
    orders = [["brightness", "contrast", "saturation"], ["saturation", "contrast", "brightness"],
              ["contrast", "saturation", "brightness"]]
    z = BatchGrid(rng.uniform(0.0, 1.0, (3, 3, 4, 4)))
    for space in (Space.LATENT, Space.IMAGE):
        zz = z if space == Space.LATENT else BatchGrid(z.data * 255.0, Space.IMAGE)
        out = color_jitter(zz, JitterParams(), rng, space, draws=[(unit, o) for o in orders])
        if np.abs(out.data - zz.data).max() > CONST_TOL * 255.0:
            failures.append(f"unit jitter is not the identity in {space.name.lower()} space")
    # crop/resize: constants stay constant
    const = BatchGrid(np.full((4, 2, 8, 8), -1.25))
    for s in range(50):
        out = crop_resize(const, CropResizeParams(0.3, 0.6, 0.5, 2.0), SeededRng(seed + s, "crop"))
        if np.abs(out.data + 1.25).max() > CONST_TOL:
            failures.append("crop/resize does not fix constants")
            break
    ok = not failures
    return CheckResult("operator_invariants", ok, "all operator invariants hold" if ok else "; ".join(failures),
                       {"failures": failures})


# --- interpolant and samplers -----------------------------------------------

def check_score_conversion(seed: int = 0) -> CheckResult:
    sched = linear_schedule()
    rng = SeededRng(seed, "score")
    worst = 0.0
    for t in np.linspace(0.05, 0.95, 91):
        x = rng.normal((64, 2, 1, 1)) * 2.0
        v = BatchGrid(gaussian_velocity(x, t), Space.VELOCITY)
        s = score_from_velocity(sched, v, BatchGrid(x), t).data
        worst = max(worst, float(np.abs(s - gaussian_score(x, t)).max()))
    ok = worst < SCORE_TOL
    return CheckResult("score_conversion", ok, f"max |score error| {worst:.3g} (tol {SCORE_TOL:g})", {"max_err": worst})


def integrator_ratios(nfe: int = 50) -> tuple[float, float]:
    """Global-error ratios (n steps vs 2n steps) on dx/dt = x from x(0) = 1."""
    field_ = CallableField(lambda x, t: x)
    x0 = BatchGrid(np.ones((1, 1, 1, 1)), Space.NOISE)

    def err(fn, kind, n):
        return abs(fn(field_, x0, SamplerConfig(kind, n)).data.item() - math.e)

    euler = err(euler_ode, "euler", nfe) / err(euler_ode, "euler", 2 * nfe)
    heun = err(heun2_ode, "heun2", nfe) / err(heun2_ode, "heun2", 2 * nfe)
    return euler, heun


def check_integrators(seed: int = 0) -> CheckResult:
    euler, heun = integrator_ratios()
    # zero diffusion reduces the SDE to Euler on the same time grid
    model = MlpVelocityField((2, 1, 1), [16, 16])
    model.set_params(0.3 * SeededRng(seed, "sde-model").normal(model.n_params))
    x0 = BatchGrid(SeededRng(seed, "sde-x0").normal((32, 2, 1, 1)), Space.NOISE)
    cfg = SamplerConfig("euler_maruyama", 20, "zero")
    sde = euler_maruyama_sde(model, x0, cfg, SeededRng(seed, "sde-path"))
    ode = euler_ode(model, x0, cfg, grid=sde_time_grid(cfg))
    bit_exact = np.array_equal(sde.data, ode.data)
    ok = EULER_RATIO[0] <= euler <= EULER_RATIO[1] and HEUN_RATIO[0] <= heun <= HEUN_RATIO[1] and bit_exact
    return CheckResult("integrator_order", ok,
                       f"euler ratio {euler:.3f} in {EULER_RATIO}, heun2 ratio {heun:.3f} in {HEUN_RATIO}, "
                       f"w=0 SDE {'==' if bit_exact else '!='} Euler",
                       {"euler_ratio": euler, "heun_ratio": heun, "sde_bit_exact": bit_exact})


# --- ablation grid ----------------------------------------------------------

ABLATION_LAMBDAS = (0.01, 0.05, 0.1, 0.2)


def ablation_cell_config(operator: str, space: str, lam: float = 0.05, K: int = 1, steps: int = 3, seed: int = 0) -> RunConfig:
    return RunConfig(name=f"ablate-{operator}-{space}", steps=steps, seed=seed, batch_size=8).replace(
        dataset={"name": "grid8"}, model={"hidden": [64, 64]},
        vecor={"enabled": True, "lam": lam, "K": K, "perturb": {"operator": operator, "space": space, "params": {}}})


def check_ablation(steps: int = 3, seed: int = 0) -> CheckResult:
    """All 18 operator/space cells train on grid8; the lambda sweep stays well-posed."""
    failures, cells = [], 0
    for op in ABLATION_OPERATORS:
        for space in ABLATION_SPACES:
            cfg = ablation_cell_config(op.value, space.name.lower(), steps=steps, seed=seed)
            try:
                state = fit(cfg)
                if len(state.log) != steps:
                    failures.append(f"{op.value}/{space.name.lower()}: {len(state.log)} log rows")
                cells += 1
            except Exception as exc:
                failures.append(f"{op.value}/{space.name.lower()}: {type(exc).__name__}: {exc}")
    margins = []
    for lam in ABLATION_LAMBDAS:
        cfg = ablation_cell_config("channel_shuffle", "velocity", lam=lam, steps=steps, seed=seed)
        try:
            fit(cfg)
            margins.append(1.0 - lam * cfg.vecor.K)
        except Exception as exc:
            failures.append(f"lambda={lam}: {type(exc).__name__}: {exc}")
    monotone = len(margins) == len(ABLATION_LAMBDAS) and all(m > 0 for m in margins) and \
        all(b < a for a, b in zip(margins, margins[1:]))
    if not monotone:
        failures.append(f"well-posedness margins not positive and decreasing: {margins}")
    ok = not failures
    return CheckResult("ablation_grid", ok,
                       f"{cells}/18 cells ran; 1-λK over λ sweep = {[round(m, 3) for m in margins]}" if ok else "; ".join(failures),
                       {"cells": cells, "margins": margins, "failures": failures})


def run_all(fault: Optional[str] = None, gradient_instances: int = 100) -> list[CheckResult]:
    return [
        _timed(check_fixed_point),
        _timed(check_well_posedness),
        _timed(check_reduction_identity),
        _timed(check_gradients, gradient_instances, 0, fault),
        _timed(check_operators),
        _timed(check_score_conversion),
        _timed(check_integrators),
        _timed(check_ablation),
    ]
