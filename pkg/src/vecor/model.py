"""Velocity fields: a tanh MLP with hand-written backprop, and a tabular field.

Both expose the same small surface used by the trainer and samplers:
``params`` (flat float64 vector), ``set_params``, ``forward(xt, t)``,
``backward(xt, t, upstream)`` and an ``n_forward`` evaluation counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BatchGrid, ParameterError, SeededRng, ShapeError, Space, VecorError
from .interpolant import as_time


class StaleCacheError(VecorError, RuntimeError):
    """backward() was called for inputs or parameters other than the last forward()."""


def fourier_features(t: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """``[sin(2 pi f t), cos(2 pi f t)]`` for each frequency, shape ``(B, 2F)``."""
    ang = 2.0 * math.pi * t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class _Cache:
    xt_id: int
    t: np.ndarray
    version: int
    acts: list  # input to each layer, post-activation
    pre: list   # pre-activation of each hidden layer


class MlpVelocityField:
    """Feed-forward field ``v(x_t, t)`` on flattened states with Fourier time features."""

    def __init__(self, state_shape, hidden=(256, 256, 256), n_freqs: int = 8, activation: str = "tanh"):
        if activation != "tanh":
            raise ParameterError(f"only the tanh activation is supported, got {activation!r}")
        self.state_shape = tuple(int(s) for s in state_shape)  # (C, H, W)
        self.dim = int(np.prod(self.state_shape))
        self.freqs = 2.0 ** np.arange(n_freqs, dtype=np.float64)
        self.widths = [self.dim + 2 * n_freqs, *[int(h) for h in hidden], self.dim]
        self.activation = activation
        self._shapes = []
        offset = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self._shapes.append((offset, fan_in, fan_out))
            offset += fan_in * fan_out + fan_out
        self.n_params = offset
        self.params = np.zeros(self.n_params)
        self.n_forward = 0
        self._version = 0
        self._cache: _Cache | None = None

    def layers(self, params=None):
        """``(W, b)`` views into the flat parameter vector, input to output."""
        p = self.params if params is None else params
        out = []
        for off, fi, fo in self._shapes:
            W = p[off:off + fi * fo].reshape(fi, fo)
            b = p[off + fi * fo:off + fi * fo + fo]
            out.append((W, b))
        return out

    def final_layer_slice(self) -> slice:
        off, fi, fo = self._shapes[-1]
        return slice(off, off + fi * fo + fo)

    def set_params(self, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got shape {params.shape}")
        self.params = params.copy()
        self._version += 1
        self._cache = None

    def init_params(self, rng: SeededRng) -> np.ndarray:
        """Uniform fan-in init (variance 1/fan_in) for hidden layers, zeros for the last."""
        p = np.zeros(self.n_params)
        for off, fi, fo in self._shapes[:-1]:
            bound = math.sqrt(3.0 / fi)
            p[off:off + fi * fo] = rng.uniform(-bound, bound, fi * fo)
        self.set_params(p)
        return self.params

    def _features(self, xt: BatchGrid, t) -> tuple[np.ndarray, np.ndarray]:
        if xt.shape[1:] != self.state_shape:
            raise ShapeError(f"model expects states of shape {self.state_shape}, got {xt.shape[1:]}")
        tt = as_time(t, xt.batch).reshape(-1)
        return np.concatenate([xt.flat(), fourier_features(tt, self.freqs)], axis=1), tt

    def forward(self, xt: BatchGrid, t) -> BatchGrid:
        h, tt = self._features(xt, t)
        acts, pre = [h], []
        layers = self.layers()
        for W, b in layers[:-1]:
            z = h @ W + b
            h = np.tanh(z)
            pre.append(z)
            acts.append(h)
        W, b = layers[-1]
        out = h @ W + b
        self.n_forward += 1
        self._cache = _Cache(id(xt), tt, self._version, acts, pre)
        return BatchGrid(out.reshape(xt.shape), Space.VELOCITY)

    def backward(self, xt: BatchGrid, t, upstream: BatchGrid) -> np.ndarray:
        """Gradient of ``<forward(xt, t), upstream>`` with respect to the parameters."""
        c = self._cache
        tt = as_time(t, xt.batch).reshape(-1)
        if c is None or c.xt_id != id(xt) or c.version != self._version or not np.array_equal(c.t, tt):
            raise StaleCacheError("backward() needs the cache of a forward() on the same inputs and parameters")
        if upstream.shape != xt.shape:
            raise ShapeError(f"upstream gradient shape {upstream.shape} does not match output {xt.shape}")
        grad = np.empty(self.n_params)
        delta = upstream.flat()
        layers = self.layers()
        for li in range(len(layers) - 1, -1, -1):
            off, fi, fo = self._shapes[li]
            W, _ = layers[li]
            a_in = c.acts[li]
            grad[off:off + fi * fo] = (a_in.T @ delta).reshape(-1)
            grad[off + fi * fo:off + fi * fo + fo] = delta.sum(axis=0)
            if li > 0:
                delta = (delta @ W.T) * (1.0 - c.acts[li] ** 2)
        return grad


class TabularVelocityField:
    """One free velocity per batch slot; the prediction ignores the state.

    Gradients with respect to the table equal gradients with respect to the
    prediction, which makes the trained value directly comparable with the
    closed-form optimum of a loss.
    """

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)
        self.n_params = int(np.prod(self.shape))
        self.params = np.zeros(self.n_params)
        self.n_forward = 0

    def set_params(self, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got shape {params.shape}")
        self.params = params.copy()

    def init_params(self, rng: SeededRng | None = None) -> np.ndarray:
        self.set_params(np.zeros(self.n_params))
        return self.params

    def forward(self, xt: BatchGrid, t=None) -> BatchGrid:
        if xt.shape != self.shape:
            raise ShapeError(f"tabular field holds shape {self.shape}, got {xt.shape}")
        self.n_forward += 1
        return BatchGrid(self.params.reshape(self.shape), Space.VELOCITY)

    def backward(self, xt: BatchGrid, t, upstream: BatchGrid) -> np.ndarray:
        if upstream.shape != self.shape:
            raise ShapeError(f"upstream gradient shape {upstream.shape} does not match {self.shape}")
        return upstream.data.reshape(-1).copy()


def build_model(state_shape, hidden=(256, 256, 256), n_freqs: int = 8, activation: str = "tanh") -> MlpVelocityField:
    return MlpVelocityField(state_shape, hidden, n_freqs, activation)
