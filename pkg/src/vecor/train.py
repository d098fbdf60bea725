"""Training loop for flow matching with optional contrastive negatives.

Random draws come from four disjoint substreams of the run seed
(``data``, ``time``, ``noise``, ``perturb``), so switching the
contrastive term on or off changes nothing but the ``perturb`` stream.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .artifacts import Manifest, csv_text, write_text_atomic
from .config import ConfigError, RunConfig
from .core import BatchGrid, NumericalError, ParameterError, SeededRng, Space, VecorError, save_checkpoint
from .interpolant import interpolate, linear_schedule, target_velocity
from .model import MlpVelocityField, TabularVelocityField
from .objective import fm_grad, fm_loss, vecor_grad, vecor_loss, validate_config
from .perturb import PIXEL_MAX, build_negatives, make_encoder

LOG_COLUMNS = ("step", "fm_term", "neg_term", "total", "grad_norm", "wall_ms")


# --- datasets --------------------------------------------------------------

GAUSS2_OFFSET, GAUSS2_STD = 2.0, 0.5


def _gauss2(n, rng):
    side = np.where(rng.uniform(0.0, 1.0, n) < 0.5, -GAUSS2_OFFSET, GAUSS2_OFFSET)
    pts = GAUSS2_STD * rng.normal((n, 2))
    pts[:, 0] += side
    return pts


def _rings(n, rng):
    radius = np.where(rng.uniform(0.0, 1.0, n) < 0.5, 1.0, 2.0)
    ang = rng.uniform(0.0, 2.0 * math.pi, n)
    pts = radius[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return pts + 0.05 * rng.normal((n, 2))


CHECKER_CELLS = [(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0]


def checker_support(pts: np.ndarray) -> np.ndarray:
    """True where a point falls in a dark cell of the 4x4 board on [-2, 2]^2."""
    inside = np.all((pts >= -2.0) & (pts < 2.0), axis=1)
    ij = np.floor(pts + 2.0).astype(int)
    return inside & ((ij[:, 0] + ij[:, 1]) % 2 == 0)


def _checker(n, rng):
    cells = np.array(CHECKER_CELLS, dtype=np.float64)
    pick = rng.integers(0, len(cells) - 1, n)
    return cells[pick] - 2.0 + rng.uniform(0.0, 1.0, (n, 2))


def _grid8(n, rng):
    """Oriented sinusoidal stripes blended between two random colors."""
    coords = np.arange(8, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    theta = rng.uniform(0.0, math.pi, n)
    freq = rng.uniform(1.0, 3.0, n)
    phase = rng.uniform(0.0, 2.0 * math.pi, n)
    lo = rng.uniform(0.0, 1.0, (n, 3))
    hi = rng.uniform(0.0, 1.0, (n, 3))
    proj = xx[None] * np.cos(theta)[:, None, None] + yy[None] * np.sin(theta)[:, None, None]
    pattern = 0.5 + 0.5 * np.sin(2.0 * math.pi * freq[:, None, None] * proj / 8.0 + phase[:, None, None])
    return hi[:, :, None, None] * pattern[:, None] + lo[:, :, None, None] * (1.0 - pattern[:, None])


DATASETS = {
    "gauss2": (_gauss2, (2, 1, 1)),
    "rings": (_rings, (2, 1, 1)),
    "checker": (_checker, (2, 1, 1)),
    "grid8": (_grid8, (3, 8, 8)),
}


def sample_dataset(name: str, n: int, rng: SeededRng) -> BatchGrid:
    if name not in DATASETS:
        raise ParameterError(f"unknown dataset {name!r}; expected one of {sorted(DATASETS)}")
    fn, shape = DATASETS[name]
    return BatchGrid(np.asarray(fn(n, rng)).reshape(n, *shape), Space.LATENT)


class DataSource:
    """Minibatch provider: fresh draws, or index draws from a fixed pool of ``size``."""

    def __init__(self, name: str, rng: SeededRng, size: Optional[int] = None):
        self.name = name
        self.rng = rng
        self.pool = None
        if size is not None:
            if size < 1:
                raise ParameterError("dataset is empty")
            self.pool = sample_dataset(name, size, rng.substream("pool")).data

    def draw(self, n: int) -> BatchGrid:
        if self.pool is None:
            return sample_dataset(self.name, n, self.rng)
        idx = self.rng.integers(0, len(self.pool) - 1, n)
        return BatchGrid(self.pool[idx], Space.LATENT)


# --- optimizers ------------------------------------------------------------

@dataclass
class OptimState:
    kind: str = "adam"
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    step_count: int = 0

    def update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.step_count += 1
        if self.kind == "sgd":
            return params - self.learning_rate * grad
        if self.kind != "adam":
            raise ParameterError(f"unknown optimizer {self.kind!r}")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
            self._tmp = np.empty_like(params)
        # in place with a scratch buffer: fresh allocations dominate the cost here
        m, v, tmp = self.m, self.v, self._tmp
        m *= self.beta1
        np.multiply(grad, 1.0 - self.beta1, out=tmp)
        m += tmp
        v *= self.beta2
        np.multiply(grad, grad, out=tmp)
        tmp *= 1.0 - self.beta2
        v += tmp
        np.divide(v, 1.0 - self.beta2 ** self.step_count, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += self.eps
        np.divide(m, tmp, out=tmp)
        tmp *= self.learning_rate / (1.0 - self.beta1 ** self.step_count)
        return params - tmp


# --- training --------------------------------------------------------------

@dataclass
class LogRecord:
    step: int
    fm_term: float
    neg_term: float
    total: float
    grad_norm: float
    wall_ms: float

    def row(self):
        return (self.step, self.fm_term, self.neg_term, self.total, self.grad_norm, self.wall_ms)


@dataclass
class TrainState:
    model: object
    optimizer: OptimState
    cfg: RunConfig
    rng: SeededRng
    step: int = 0
    log: list = field(default_factory=list)
    allow_zero_lambda: bool = False
    last_grad: Optional[np.ndarray] = None
    manifest: Optional[Manifest] = None  # set by fit()

    def __post_init__(self):
        self.streams = {name: self.rng.substream(name) for name in ("data", "time", "noise", "perturb")}
        self.schedule = linear_schedule()
        self.encoder = make_encoder(self.cfg.dataset.encoder)
        self.spec = self.cfg.perturb_spec() if self.cfg.vecor.enabled else None


def state_shape(cfg: RunConfig) -> tuple:
    shape = DATASETS[cfg.dataset.name][1]
    return tuple(make_encoder(cfg.dataset.encoder).latent_shape((1, *shape))[1:])


def init_state(cfg: RunConfig, model=None, allow_zero_lambda: bool = False) -> TrainState:
    """Fresh model (unless one is passed in), optimizer and random streams for ``cfg``."""
    rng = SeededRng(cfg.seed, "run")
    if model is None:
        model = MlpVelocityField(state_shape(cfg), cfg.model.hidden, cfg.model.n_freqs, cfg.model.activation)
        model.init_params(rng.substream("init"))
    o = cfg.optimizer
    opt = OptimState(o.kind, o.lr, o.beta1, o.beta2, o.eps)
    return TrainState(model, opt, cfg, rng, allow_zero_lambda=allow_zero_lambda)


def train_step(state: TrainState, batch: BatchGrid, images: Optional[BatchGrid] = None) -> TrainState:
    """One optimizer update on ``batch``; appends a log record to ``state.log``."""
    t0 = time.perf_counter()
    cfg = state.cfg
    B = batch.batch
    t = state.streams["time"].uniform(0.0, 1.0, B)
    eps = BatchGrid(state.streams["noise"].normal(batch.shape), Space.NOISE)
    xt = interpolate(state.schedule, batch, eps, t)
    v_pos = target_velocity(state.schedule, batch, eps, t)
    v_pred = state.model.forward(xt, t)
    if cfg.vecor.enabled:
        vcfg = cfg.vecor_config()
        cands = build_negatives(batch, eps, t, v_pos, state.spec, state.schedule, state.streams["perturb"],
                                state.encoder, images)
        report = vecor_loss(v_pred, cands, vcfg, state.allow_zero_lambda)
        upstream = vecor_grad(v_pred, cands, vcfg, state.allow_zero_lambda)
    else:
        report = fm_loss(v_pred, v_pos)
        upstream = fm_grad(v_pred, v_pos)
    step = state.step + 1
    if not math.isfinite(report.total):
        raise NumericalError(f"non-finite loss at step {step}")
    grad = state.model.backward(xt, t, upstream)
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite gradient at step {step}")
    state.model.set_params(state.optimizer.update(state.model.params, grad))
    state.last_grad = grad
    state.step = step
    wall = 0.0 if cfg.deterministic_log else (time.perf_counter() - t0) * 1e3
    state.log.append(LogRecord(step, report.positive_term, report.negative_term, report.total,
                               float(np.sqrt(grad @ grad)), wall))
    return state


def next_batch(state: TrainState, source: DataSource) -> tuple[BatchGrid, Optional[BatchGrid]]:
    """Draw a minibatch; with a pooling encoder the dataset grids are images."""
    raw = source.draw(state.cfg.effective_batch_size())
    if state.cfg.dataset.encoder == "identity":
        return raw, None
    images = BatchGrid(raw.data * PIXEL_MAX, Space.IMAGE)
    return state.encoder.encode(images), images


def log_csv(state: TrainState) -> str:
    return csv_text(LOG_COLUMNS, (r.row() for r in state.log))


def run_dir(cfg: RunConfig, out_root=None) -> Path:
    return Path(out_root if out_root is not None else cfg.out_dir) / cfg.name


def fit(
    cfg: RunConfig,
    dataset: Optional[Callable] = None,
    out_dir=None,
    on_step: Optional[Callable[[TrainState], None]] = None,
    allow_zero_lambda: bool = False,
) -> TrainState:
    """Run ``cfg.steps`` updates.

    ``dataset`` may be a ``DataSource``-like object with ``draw(n)``; by
    default the configured synthetic dataset is used. With ``out_dir`` the
    run directory receives ``config.json``, ``train_log.csv``, checkpoints
    and ``manifest.json``. ``on_step`` is called after every update.
    """
    try:
        cfg.validate()
    except ConfigError:
        if not (allow_zero_lambda and cfg.vecor.enabled and cfg.vecor.lam == 0.0):
            raise
        validate_config(cfg.vecor_config(), allow_zero=True)
    state = init_state(cfg, allow_zero_lambda=allow_zero_lambda)
    source = dataset if dataset is not None else DataSource(cfg.dataset.name, state.streams["data"], cfg.dataset.size)

    rdir = run_dir(cfg, out_dir) if out_dir is not None else None
    manifest = Manifest(cfg.hash())
    run_id = f"{cfg.name}-{cfg.hash()[:8]}"
    if rdir is not None:
        rdir.mkdir(parents=True, exist_ok=True)
        write_text_atomic(rdir / "config.json", cfg.to_json())
        manifest.artifacts["config"] = "config.json"

    def checkpoint():
        name = f"{run_id}-{state.step}.ckpt"
        try:
            save_checkpoint(rdir / name, cfg.hash(), state.model.params)
        except OSError as exc:
            raise VecorIOError(f"cannot write checkpoint {rdir / name}: {exc.strerror}") from exc
        manifest.artifacts[f"checkpoint_{state.step}"] = name
        manifest.extra["final_checkpoint"] = name

    t0 = time.perf_counter()
    try:
        for _ in range(cfg.steps):
            batch, images = next_batch(state, source) if dataset is None else (dataset.draw(cfg.effective_batch_size()), None)
            if batch.batch == 0:
                raise ParameterError("dataset is empty")
            train_step(state, batch, images)
            if on_step is not None:
                on_step(state)
            if rdir is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                checkpoint()
    except VecorError as exc:
        if rdir is not None:
            manifest.stage("train", "failed", step=state.step + 1, error=str(exc))
            _write_log(rdir, state, manifest)
            manifest.write(rdir / "manifest.json")
        raise
    manifest.stage("train", "ok", steps=state.step, seconds=round(time.perf_counter() - t0, 3))
    if rdir is not None:
        if f"checkpoint_{state.step}" not in manifest.artifacts:
            checkpoint()
        _write_log(rdir, state, manifest)
        manifest.write(rdir / "manifest.json")
    state.manifest = manifest
    return state


class VecorIOError(VecorError, OSError):
    pass


def _write_log(rdir: Path, state: TrainState, manifest: Manifest):
    try:
        write_text_atomic(rdir / "train_log.csv", log_csv(state))
    except OSError as exc:
        raise VecorIOError(f"cannot write {rdir / 'train_log.csv'}: {exc.strerror}") from exc
    manifest.artifacts["log"] = "train_log.csv"


def tabular_state(cfg: RunConfig, shape, allow_zero_lambda: bool = False) -> TrainState:
    """Train state around a :class:`TabularVelocityField` of the given batch shape."""
    return init_state(cfg, model=TabularVelocityField(shape), allow_zero_lambda=allow_zero_lambda)


def fit_frozen(model, xt: BatchGrid, t, cands, vcfg, lr: float = 0.1, tol: float = 1e-6,
               max_steps: int = 10_000, target: Optional[BatchGrid] = None, allow_zero_lambda: bool = False):
    """Plain gradient descent on the contrastive loss for one frozen candidate set.

    Stops once the prediction is within ``tol`` (max abs) of ``target``.
    Returns ``(steps_taken, final_residual)``; residual is NaN without a target.
    """
    opt = OptimState("sgd", lr)
    residual = float("nan")
    for step in range(1, max_steps + 1):
        pred = model.forward(xt, t)
        upstream = vecor_grad(pred, cands, vcfg, allow_zero_lambda)
        model.set_params(opt.update(model.params, model.backward(xt, t, upstream)))
        if target is not None:
            residual = float(np.abs(model.forward(xt, t).data - target.data).max())
            if residual < tol:
                return step, residual
    return max_steps, residual
