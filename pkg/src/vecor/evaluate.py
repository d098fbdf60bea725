"""Sample-quality proxies and the sweep / A-B comparison harnesses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .artifacts import csv_text
from .config import RunConfig
from .core import BatchGrid, ParameterError, SeededRng, ShapeError, Space
from .perturb import PIXEL_MAX, make_encoder
from .sample import SamplerConfig, generate
from .train import fit, sample_dataset

SWEEP_COLUMNS = ("axis", "axis_value", "seed", "sliced_w2", "energy_distance", "mean_gap_norm",
                 "n_gen", "n_ref", "sampler", "nfe")


class ProtocolError(ParameterError):
    """Two runs meant as an A/B pair differ outside the contrastive block."""


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, BatchGrid):
        return x.flat()
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr.reshape(arr.shape[0], int(np.prod(arr.shape[1:])))


def _check_pair(g: np.ndarray, r: np.ndarray):
    if len(g) == 0 or len(r) == 0:
        raise ShapeError("metric needs nonempty sample sets")
    if g.shape[1] != r.shape[1]:
        raise ShapeError(f"dimension mismatch: {g.shape[1]} vs {r.shape[1]}")


def w2_sq_sorted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact squared W2 between 1-D empirical measures, column by column.

    ``a`` is ``(n, P)`` and ``b`` is ``(m, P)``, both sorted along axis 0.
    Unequal sizes are handled by integrating the quantile functions over
    the merged breakpoints.
    """
    n, m = len(a), len(b)
    if n == m:
        return ((a - b) ** 2).mean(axis=0)
    cuts = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    lower = np.concatenate([[0.0], cuts[:-1]])
    width = cuts - lower
    mid = 0.5 * (cuts + lower)
    ia = np.minimum((mid * n).astype(np.int64), n - 1)
    ib = np.minimum((mid * m).astype(np.int64), m - 1)
    return (width[:, None] * (a[ia] - b[ib]) ** 2).sum(axis=0)


def sliced_w2(gen, ref, n_projections: int = 256, rng: Optional[SeededRng] = None) -> float:
    """Mean over random unit directions of the squared 1-D W2 between projections."""
    g, r = _as_matrix(gen), _as_matrix(ref)
    _check_pair(g, r)
    if n_projections < 1:
        raise ParameterError("n_projections must be >= 1")
    rng = rng if rng is not None else SeededRng(0, "projections")
    u = rng.normal((n_projections, g.shape[1]))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pg = np.sort(g @ u.T, axis=0)
    pr = np.sort(r @ u.T, axis=0)
    return float(w2_sq_sorted(pg, pr).mean())


def _mean_pdist(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    total = 0.0
    for i in range(0, len(a), chunk):
        total += cdist(a[i:i + chunk], b).sum()
    return total / (len(a) * len(b))


def energy_distance(gen, ref) -> float:
    """``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` with V-statistics (zero for equal sets)."""
    g, r = _as_matrix(gen), _as_matrix(ref)
    _check_pair(g, r)
    val = 2.0 * _mean_pdist(g, r) - _mean_pdist(g, g) - _mean_pdist(r, r)
    return max(val, 0.0)


@dataclass
class MetricReport:
    sliced_w2: float
    energy_distance: float
    mean_gap: np.ndarray
    n_ref: int
    n_gen: int
    n_projections: int

    @property
    def mean_gap_norm(self) -> float:
        return float(np.linalg.norm(self.mean_gap))


def compute_metrics(gen, ref, n_projections: int = 256, seed: int = 0) -> MetricReport:
    g, r = _as_matrix(gen), _as_matrix(ref)
    _check_pair(g, r)
    return MetricReport(
        sliced_w2=sliced_w2(g, r, n_projections, SeededRng(seed, "projections")),
        energy_distance=energy_distance(g, r),
        mean_gap=g.mean(axis=0) - r.mean(axis=0),
        n_ref=len(r),
        n_gen=len(g),
        n_projections=n_projections,
    )


@dataclass
class SweepPoint:
    value: int
    reports: dict  # seed -> MetricReport


@dataclass
class SweepResult:
    axis: str
    sampler: str
    nfe: Optional[int]
    seeds: list
    points: list = field(default_factory=list)
    final_params: dict = field(default_factory=dict)

    def values(self) -> list:
        return [p.value for p in self.points]

    def metric(self, name: str, value=None) -> np.ndarray:
        """``(n_points, n_seeds)`` array of a metric, or one row for ``value``."""
        rows = [[getattr(p.reports[s], name) for s in self.seeds] for p in self.points]
        arr = np.array(rows, dtype=np.float64)
        if value is None:
            return arr
        return arr[self.values().index(value)]

    def rows(self):
        for p in self.points:
            for s in self.seeds:
                m = p.reports[s]
                nfe = p.value if self.axis == "nfe" else self.nfe
                yield (self.axis, p.value, s, m.sliced_w2, m.energy_distance, m.mean_gap_norm,
                       m.n_gen, m.n_ref, self.sampler, nfe)


def sweep_csv(results: Sequence[SweepResult]) -> str:
    rows = [row for res in results for row in res.rows()]
    return csv_text(SWEEP_COLUMNS, rows)


def reference_set(cfg: RunConfig, n: int, seed: int) -> BatchGrid:
    """Held-out data in the model's state space, from its own substream."""
    data = sample_dataset(cfg.dataset.name, n, SeededRng(seed, "reference"))
    if cfg.dataset.encoder == "identity":
        return data
    return make_encoder(cfg.dataset.encoder).encode(BatchGrid(data.data * PIXEL_MAX, Space.IMAGE))


def _check_increasing(values):
    if len(values) == 0:
        raise ParameterError("sweep needs at least one axis value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ParameterError(f"sweep axis values must be strictly increasing, got {list(values)}")


def nfe_sweep(model, sampler_kinds, nfe_list, ref, seeds, n_gen: Optional[int] = None,
              n_projections: int = 256, delta_clip: float = 1e-3) -> list:
    """One :class:`SweepResult` per sampler kind over the NFE grid."""
    _check_increasing(list(nfe_list))
    refm = _as_matrix(ref)
    state_shape = ref.shape[1:] if isinstance(ref, BatchGrid) else (refm.shape[1], 1, 1)
    n_gen = n_gen or len(refm)
    results = []
    for kind in sampler_kinds:
        res = SweepResult("nfe", kind, None, list(seeds))
        for nfe in nfe_list:
            scfg = SamplerConfig(kind, int(nfe), "sigma", delta_clip).validate()
            reports = {}
            for s in seeds:
                gen = generate(model, (n_gen, *state_shape), scfg, s)
                reports[s] = compute_metrics(gen, refm, n_projections, s)
            res.points.append(SweepPoint(int(nfe), reports))
        results.append(res)
    return results


_AB_EXEMPT = ("vecor", "name", "out_dir", "seed")


def check_ab_protocol(cfg_base: RunConfig, cfg_vecor: RunConfig):
    a, b = cfg_base.to_dict(), cfg_vecor.to_dict()
    diffs = sorted(k for k in set(a) | set(b) if k not in _AB_EXEMPT and a.get(k) != b.get(k))
    if diffs:
        raise ProtocolError(f"A/B configs may differ only in the vecor block; they also differ in: {', '.join(diffs)}")


def train_tracked(cfg: RunConfig, seed: int, checkpoints_at, ref: BatchGrid, allow_zero_lambda=False, out_dir=None):
    """Train ``cfg`` with ``seed`` and evaluate the model at each listed step."""
    cfg = cfg.replace(seed=seed, steps=max(checkpoints_at), name=f"{cfg.name}-seed{seed}")
    wanted = set(checkpoints_at)
    reports = {}
    shape = ref.shape[1:]

    def on_step(state):
        if state.step in wanted:
            gen = generate(state.model, (cfg.eval.n_gen, *shape), cfg.sampler, seed)
            reports[state.step] = compute_metrics(gen, ref, cfg.eval.n_projections, seed)

    state = fit(cfg, out_dir=out_dir, on_step=on_step, allow_zero_lambda=allow_zero_lambda)
    return reports, state


def ab_compare(cfg_base: RunConfig, cfg_vecor: RunConfig, seeds, checkpoints_at,
               allow_zero_lambda: bool = False, out_dir=None) -> tuple:
    """Train baseline and contrastive arms per seed on shared data/noise/time streams.

    Returns ``(baseline, vecor)`` step-axis sweeps; each carries the final
    parameters per seed in ``final_params``.
    """
    check_ab_protocol(cfg_base, cfg_vecor)
    checkpoints_at = sorted(int(s) for s in checkpoints_at)
    _check_increasing(checkpoints_at)
    results = []
    for cfg in (cfg_base, cfg_vecor):
        res = SweepResult("step", cfg.sampler.kind, cfg.sampler.nfe, list(seeds))
        per_seed = {}
        for s in seeds:
            ref = reference_set(cfg, cfg.eval.n_ref, s)
            per_seed[s], state = train_tracked(cfg, s, checkpoints_at, ref, allow_zero_lambda, out_dir)
            res.final_params[s] = state.model.params.copy()
        for step in checkpoints_at:
            res.points.append(SweepPoint(step, {s: per_seed[s][step] for s in seeds}))
        results.append(res)
    return results[0], results[1]
