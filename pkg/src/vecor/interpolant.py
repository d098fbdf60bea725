"""Interpolation paths between noise (t=0) and data (t=1).

The state at time t is ``alpha(t) * x + sigma(t) * eps`` and its time
derivative ``dalpha(t) * x + dsigma(t) * eps`` is the regression target.

For a general schedule the posterior noise mean given the state is

    E[eps | x_t] = (dalpha * x_t - alpha * v) / (dalpha * sigma - alpha * dsigma)

and the score is ``-E[eps | x_t] / sigma``. Only the linear schedule is
exposed below, where this reduces to ``(t * v - x_t) / (1 - t)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import BatchGrid, ParameterError, Space, check_same_shape


@dataclass(frozen=True)
class Schedule:
    alpha: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    dalpha: Callable[[np.ndarray], np.ndarray]
    dsigma: Callable[[np.ndarray], np.ndarray]
    kind: str = "linear"


def linear_schedule() -> Schedule:
    return Schedule(
        alpha=lambda t: np.asarray(t, dtype=np.float64),
        sigma=lambda t: 1.0 - np.asarray(t, dtype=np.float64),
        dalpha=lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
        dsigma=lambda t: -np.ones_like(np.asarray(t, dtype=np.float64)),
        kind="linear",
    )


def as_time(t, batch: int) -> np.ndarray:
    """Broadcastable ``(B, 1, 1, 1)`` time array from a scalar or per-sample vector."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(batch, float(arr))
    arr = arr.reshape(-1)
    if arr.shape[0] != batch:
        raise ParameterError(f"got {arr.shape[0]} times for a batch of {batch}")
    if np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
        raise ParameterError("time draws must lie in [0, 1]")
    return arr[:, None, None, None]


def interpolate(sched: Schedule, x: BatchGrid, eps: BatchGrid, t) -> BatchGrid:
    check_same_shape(x, eps, "data/noise")
    tt = as_time(t, x.batch)
    return BatchGrid(sched.alpha(tt) * x.data + sched.sigma(tt) * eps.data, Space.LATENT)


def target_velocity(sched: Schedule, x: BatchGrid, eps: BatchGrid, t) -> BatchGrid:
    check_same_shape(x, eps, "data/noise")
    tt = as_time(t, x.batch)
    return BatchGrid(sched.dalpha(tt) * x.data + sched.dsigma(tt) * eps.data, Space.VELOCITY)


class SingularityError(ParameterError):
    pass


def score_from_velocity(sched: Schedule, v: BatchGrid, xt: BatchGrid, t, delta_min: float = 1e-3) -> BatchGrid:
    """Score of the marginal at time t recovered from a velocity estimate.

    Raises :class:`SingularityError` for ``t >= 1 - delta_min``, where the
    ``1 / (1 - t)`` factor blows up.
    """
    if sched.kind != "linear":
        raise ParameterError(f"score conversion is only implemented for the linear schedule, not {sched.kind!r}")
    check_same_shape(v, xt, "velocity/state")
    tt = as_time(t, v.batch)
    if np.any(tt >= 1.0 - delta_min):
        raise SingularityError(f"score is singular near t=1; clamp t below {1.0 - delta_min}")
    return BatchGrid((tt * v.data - xt.data) / (1.0 - tt), Space.LATENT)


def gaussian_velocity(xt: np.ndarray, t: float) -> np.ndarray:
    """Exact marginal velocity when the data are standard normal."""
    return (2.0 * t - 1.0) * xt / (t * t + (1.0 - t) ** 2)


def gaussian_score(xt: np.ndarray, t: float) -> np.ndarray:
    """Exact marginal score when the data are standard normal."""
    return -xt / (t * t + (1.0 - t) ** 2)
