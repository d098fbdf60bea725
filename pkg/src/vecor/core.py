"""Batched grids, seeded random streams, and the binary grid format.

Every tensor in the package is a :class:`BatchGrid`: a read-only float64
array of shape ``(B, C, H, W)`` plus a tag saying which space it lives in.
Point clouds are the degenerate ``H = W = 1`` case.
"""

from __future__ import annotations

import enum
import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class VecorError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VecorError, ValueError):
    pass


class DegenerateInputError(VecorError, ValueError):
    pass


class ParameterError(VecorError, ValueError):
    pass


class OperatorInapplicableError(VecorError, ValueError):
    """An operator cannot act on this input (e.g. channel shuffle with C=1)."""


class NumericalError(VecorError, ArithmeticError):
    """A non-finite value appeared where the contract forbids it."""


class Space(enum.IntEnum):
    IMAGE = 0
    LATENT = 1
    VELOCITY = 2
    NOISE = 3

    @classmethod
    def parse(cls, name: "str | Space") -> "Space":
        if isinstance(name, Space):
            return name
        try:
            return cls[name.upper()]
        except KeyError:
            raise ParameterError(f"unknown space {name!r}; expected one of {[s.name.lower() for s in cls]}") from None


@dataclass(frozen=True, eq=False)
class BatchGrid:
    """Immutable ``(B, C, H, W)`` float64 grid tagged with its space."""

    data: np.ndarray
    space: Space = Space.LATENT

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 4:
            raise ShapeError(f"BatchGrid needs rank 4 (B, C, H, W), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericalError("BatchGrid entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "space", Space.parse(self.space))

    @classmethod
    def from_points(cls, points, space: Space = Space.LATENT) -> "BatchGrid":
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls(pts[:, :, None, None], space)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    def flat(self) -> np.ndarray:
        """Per-sample flattened view, shape ``(B, C*H*W)``."""
        return self.data.reshape(self.batch, -1)

    def with_data(self, data: np.ndarray) -> "BatchGrid":
        return BatchGrid(np.asarray(data).reshape(self.shape), self.space)

    def retag(self, space: Space) -> "BatchGrid":
        return BatchGrid(self.data, space)

    def __repr__(self):
        return f"BatchGrid(shape={self.shape}, space={self.space.name})"


def check_same_shape(a: BatchGrid, b: BatchGrid, what: str = "operands"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


def grid_elementwise(a: BatchGrid, b: BatchGrid, op: str = "add", scale: float = 1.0) -> BatchGrid:
    """``op(a, scale * b)`` elementwise; the result keeps ``a``'s space tag."""
    check_same_shape(a, b)
    sb = scale * b.data
    if op == "add":
        out = a.data + sb
    elif op == "sub":
        out = a.data - sb
    elif op == "mul":
        out = a.data * sb
    else:
        raise ParameterError(f"unknown elementwise op {op!r}")
    return BatchGrid(out, a.space)


def per_sample_std(x: BatchGrid) -> np.ndarray:
    """Population standard deviation of each sample over all C*H*W entries."""
    n = x.data[0].size
    if n < 2:
        raise DegenerateInputError(f"per-sample std needs at least 2 entries per sample, got {n}")
    return x.flat().std(axis=1)


class SeededRng:
    """Counter-based random stream keyed by ``(seed, stream name)``.

    Substreams are Philox generators whose keys mix the seed with a hash
    of the stream name, so drawing from ``"perturb"`` never shifts the
    values later drawn from ``"noise"``.
    """

    def __init__(self, seed: int, stream: str = "root"):
        self.seed = int(seed)
        self.stream = stream
        digest = hashlib.blake2b(stream.encode(), digest_size=8).digest()
        name_key = int.from_bytes(digest, "little")
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, name_key], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, name: str) -> "SeededRng":
        return SeededRng(self.seed, f"{self.stream}/{name}")

    def uniform(self, a=0.0, b=1.0, size=None):
        return self.gen.uniform(a, b, size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def beta(self, alpha, size=None):
        return self.gen.beta(alpha, alpha, size)

    def integers(self, lo, hi_inclusive, size=None):
        return self.gen.integers(lo, hi_inclusive, size=size, endpoint=True)

    def permutation(self, n):
        return self.gen.permutation(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream!r})"


def rng_draw(rng: SeededRng, dist: str, n: int, *params) -> np.ndarray:
    """Draw ``n`` values from a named distribution.

    ``dist`` is one of ``uniform(a, b)``, ``normal`` (standard),
    ``beta(alpha)`` (symmetric) or ``int_range(lo, hi)`` (inclusive).
    """
    if dist == "uniform":
        a, b = params if params else (0.0, 1.0)
        if not a < b:
            raise ParameterError(f"uniform needs a < b, got a={a}, b={b}")
        return rng.uniform(a, b, n)
    if dist == "normal":
        return rng.normal(n)
    if dist == "beta":
        (alpha,) = params
        if not alpha > 0:
            raise ParameterError(f"beta needs alpha > 0, got {alpha}")
        return rng.beta(alpha, n)
    if dist == "int_range":
        lo, hi = params
        if lo > hi:
            raise ParameterError(f"int_range needs lo <= hi, got lo={lo}, hi={hi}")
        return rng.integers(lo, hi, n)
    raise ParameterError(f"unknown distribution {dist!r}")


# Binary grid dump: <IIII B> header then float64 payload, all little-endian.
_HEADER = struct.Struct("<IIIIB")


def grid_to_bytes(g: BatchGrid) -> bytes:
    header = _HEADER.pack(*g.shape, int(g.space))
    return header + g.data.astype("<f8", copy=False).tobytes(order="C")


def grid_from_bytes(buf: bytes) -> BatchGrid:
    if len(buf) < _HEADER.size:
        raise ShapeError("truncated grid dump: header incomplete")
    b, c, h, w, tag = _HEADER.unpack_from(buf)
    n = b * c * h * w
    payload = buf[_HEADER.size:]
    if len(payload) != 8 * n:
        raise ShapeError(f"grid dump payload has {len(payload)} bytes, expected {8 * n} for shape {(b, c, h, w)}")
    data = np.frombuffer(payload, dtype="<f8").reshape(b, c, h, w)
    return BatchGrid(data, Space(tag))


def save_grid(path, g: BatchGrid):
    Path(path).write_bytes(grid_to_bytes(g))


def load_grid(path) -> BatchGrid:
    return grid_from_bytes(Path(path).read_bytes())


# Checkpoint: 32-byte sha256 of the run config, then the parameter vector as a
# (1, P, 1, 1) grid dump.
def save_checkpoint(path, config_hash: str, params: np.ndarray):
    digest = bytes.fromhex(config_hash)
    if len(digest) != 32:
        raise ParameterError("config hash must be a sha256 hex digest")
    grid = BatchGrid(np.asarray(params, dtype=np.float64).reshape(1, -1, 1, 1), Space.LATENT)
    buf = io.BytesIO()
    buf.write(digest)
    buf.write(grid_to_bytes(grid))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 32:
        raise ShapeError(f"{path}: truncated checkpoint")
    grid = grid_from_bytes(raw[32:])
    return raw[:32].hex(), grid.data.reshape(-1).copy()
