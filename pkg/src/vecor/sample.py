"""Fixed-grid integrators from noise (t=0) to data (t=1).

The stochastic sampler integrates

    dX = [v(X, t) + (w_t / 2) * s(X, t)] dt + sqrt(w_t) dW,    w_t = 1 - t

where the score ``s`` is recovered from the velocity. This keeps the
marginals of the deterministic flow while injecting noise. Integration
stops at ``1 - delta_clip`` and one plain Euler step covers the rest,
since the score diverges at t = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BatchGrid, NumericalError, ParameterError, SeededRng, Space
from .interpolant import linear_schedule, score_from_velocity

SAMPLERS = ("euler", "heun2", "euler_maruyama")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "euler_maruyama"
    nfe: int = 50
    w: str = "sigma"  # "zero" disables diffusion (test hook)
    delta_clip: float = 1e-3

    def validate(self) -> "SamplerConfig":
        if self.kind not in SAMPLERS:
            raise ParameterError(f"unknown sampler {self.kind!r}; expected one of {SAMPLERS}")
        if self.nfe < 1:
            raise ParameterError(f"nfe must be >= 1, got {self.nfe}")
        if self.kind == "heun2" and self.nfe % 2:
            raise ParameterError(f"heun2 uses 2 evaluations per step, so nfe must be even, got {self.nfe}")
        if self.kind == "euler_maruyama" and self.nfe < 2:
            raise ParameterError("euler_maruyama needs nfe >= 2 (one final deterministic step)")
        if self.w not in ("sigma", "zero"):
            raise ParameterError(f"unknown diffusion schedule {self.w!r}")
        if not 0.0 < self.delta_clip < 0.5:
            raise ParameterError(f"delta_clip must lie in (0, 0.5), got {self.delta_clip}")
        return self


class CallableField:
    """Wrap ``fn(x, t) -> array`` as a velocity model with an evaluation counter."""

    def __init__(self, fn):
        self.fn = fn
        self.n_forward = 0

    def forward(self, xt: BatchGrid, t) -> BatchGrid:
        self.n_forward += 1
        return BatchGrid(self.fn(xt.data, t), Space.VELOCITY)


def _eval(model, x: np.ndarray, t: float, step: int) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"sampler state became non-finite at step {step}")
    return model.forward(BatchGrid(x, Space.LATENT), float(t)).data


def _finish(x: np.ndarray, step: int) -> BatchGrid:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"sampler state became non-finite at step {step}")
    return BatchGrid(x, Space.LATENT)


def uniform_grid(n_steps: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_steps + 1)


def sde_time_grid(cfg: SamplerConfig) -> np.ndarray:
    """``nfe - 1`` stochastic steps on [0, 1 - delta] followed by the step to 1."""
    stoch = np.linspace(0.0, 1.0 - cfg.delta_clip, cfg.nfe)
    return np.append(stoch, 1.0)


def euler_ode(model, x0: BatchGrid, cfg: SamplerConfig, grid=None) -> BatchGrid:
    if grid is None:
        cfg.validate()
        grid = uniform_grid(cfg.nfe)
    x = x0.data.copy()
    for k in range(len(grid) - 1):
        dt = grid[k + 1] - grid[k]
        x = x + dt * _eval(model, x, grid[k], k)
    return _finish(x, len(grid) - 1)


def heun2_ode(model, x0: BatchGrid, cfg: SamplerConfig) -> BatchGrid:
    cfg.validate()
    if cfg.nfe % 2:
        raise ParameterError(f"heun2 needs an even nfe, got {cfg.nfe}")
    grid = uniform_grid(cfg.nfe // 2)
    x = x0.data.copy()
    for k in range(len(grid) - 1):
        t, dt = grid[k], grid[k + 1] - grid[k]
        k1 = _eval(model, x, t, k)
        x_pred = x + dt * k1
        k2 = _eval(model, x_pred, grid[k + 1], k)
        x = x + (dt / 2.0) * (k1 + k2)
    return _finish(x, len(grid) - 1)


def euler_maruyama_sde(model, x0: BatchGrid, cfg: SamplerConfig, rng: SeededRng) -> BatchGrid:
    cfg.validate()
    if cfg.nfe < 2:
        raise ParameterError("euler_maruyama needs nfe >= 2")
    sched = linear_schedule()
    grid = sde_time_grid(cfg)
    x = x0.data.copy()
    n_stoch = len(grid) - 2
    for k in range(n_stoch):
        t, dt = grid[k], grid[k + 1] - grid[k]
        noise = rng.normal(x.shape)
        v = _eval(model, x, t, k)
        w_t = 0.0 if cfg.w == "zero" else 1.0 - t
        if w_t > 0.0:
            s = score_from_velocity(sched, BatchGrid(v, Space.VELOCITY), BatchGrid(x, Space.LATENT), t, cfg.delta_clip).data
            x = x + dt * (v + 0.5 * w_t * s) + math.sqrt(w_t * dt) * noise
        else:
            x = x + dt * v
    dt = grid[-1] - grid[-2]
    x = x + dt * _eval(model, x, grid[-2], n_stoch)
    return _finish(x, n_stoch + 1)


def run_sampler(model, x0: BatchGrid, cfg: SamplerConfig, rng: SeededRng | None = None) -> BatchGrid:
    cfg.validate()
    if cfg.kind == "euler":
        return euler_ode(model, x0, cfg)
    if cfg.kind == "heun2":
        return heun2_ode(model, x0, cfg)
    if rng is None:
        raise ParameterError("euler_maruyama needs a random stream")
    return euler_maruyama_sde(model, x0, cfg, rng)


def generate(model, shape, cfg: SamplerConfig, seed: int) -> BatchGrid:
    """Draw prior noise and integrate it; noise and path noise use separate substreams."""
    rng = SeededRng(seed, "sample")
    x0 = BatchGrid(rng.substream("prior").normal(tuple(shape)), Space.NOISE)
    return run_sampler(model, x0, cfg, rng.substream("path"))
