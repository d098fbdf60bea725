"""Augmentation-style perturbations used to synthesize negative velocities.

Each operator maps a ``(B, C, H, W)`` grid to a grid of the same shape.
They can act on images, latents, or velocities; :func:`build_negatives`
wires an operator into one of those three spaces and returns the positive
velocity together with K negatives that share its noise and time draws.

Image-space values use 8-bit pixel units ``[0, 255]``. Encoders map an
image to a latent and divide by 255, so the default encoder is the
identity up to that pixel normalization.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    BatchGrid,
    OperatorInapplicableError,
    ParameterError,
    SeededRng,
    Space,
    per_sample_std,
)
from .interpolant import Schedule, as_time

PIXEL_MAX = 255.0
MIN_CROP_DIM = 2


class Operator(enum.Enum):
    CHANNEL_SHUFFLE = "channel_shuffle"
    CROP_RESIZE = "crop_resize"
    CUTMIX = "cutmix"
    GAUSSIAN_BLUR = "gaussian_blur"
    GAUSSIAN_NOISE = "gaussian_noise"
    COLOR_JITTER = "color_jitter"
    IDENTITY = "identity"  # test hook: negatives equal the positive

    @classmethod
    def parse(cls, name: "str | Operator") -> "Operator":
        if isinstance(name, Operator):
            return name
        try:
            return cls(name.lower())
        except ValueError:
            raise ParameterError(f"unknown perturbation operator {name!r}; expected one of {[o.value for o in cls]}") from None


ABLATION_OPERATORS = [op for op in Operator if op is not Operator.IDENTITY]
ABLATION_SPACES = [Space.IMAGE, Space.LATENT, Space.VELOCITY]


@dataclass(frozen=True)
class CropResizeParams:
    scale_min: float = 0.9
    scale_max: float = 0.95
    ar_min: float = 0.95
    ar_max: float = 1.05

    def __post_init__(self):
        if not 0.0 < self.scale_min <= self.scale_max <= 1.0:
            raise ParameterError("crop scale needs 0 < scale_min <= scale_max <= 1")
        if not 0.0 < self.ar_min <= self.ar_max:
            raise ParameterError("crop aspect ratio needs 0 < ar_min <= ar_max")


@dataclass(frozen=True)
class BlurParams:
    k: int = 5
    sigma: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ParameterError(f"blur kernel size must be odd and positive, got {self.k}")
        if self.sigma < 1.0:
            raise ParameterError(f"blur sigma must be >= 1, got {self.sigma}")


@dataclass(frozen=True)
class NoiseParams:
    base_scale: float = 1.0

    def __post_init__(self):
        if not self.base_scale > 0:
            raise ParameterError("noise base_scale must be positive")

    @classmethod
    def for_space(cls, space: Space) -> "NoiseParams":
        return cls(PIXEL_MAX if space == Space.IMAGE else 1.0)


@dataclass(frozen=True)
class JitterParams:
    delta: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ParameterError("jitter delta must lie in (0, 1)")


@dataclass(frozen=True)
class CutMixParams:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError("cutmix alpha must be positive")


_PARAM_TYPES = {
    Operator.CROP_RESIZE: CropResizeParams,
    Operator.CUTMIX: CutMixParams,
    Operator.GAUSSIAN_BLUR: BlurParams,
    Operator.GAUSSIAN_NOISE: NoiseParams,
    Operator.COLOR_JITTER: JitterParams,
}


@dataclass(frozen=True)
class PerturbSpec:
    operator: Operator = Operator.CHANNEL_SHUFFLE
    space: Space = Space.VELOCITY
    K: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "operator", Operator.parse(self.operator))
        object.__setattr__(self, "space", Space.parse(self.space))
        if self.space not in ABLATION_SPACES:
            raise ParameterError(f"perturbation space must be image, latent or velocity, got {self.space.name.lower()}")
        if int(self.K) < 1:
            raise ParameterError(f"K must be >= 1, got {self.K}")
        self.param_record()  # validate early

    def param_record(self):
        cls = _PARAM_TYPES.get(self.operator)
        if cls is None:
            if self.params:
                raise ParameterError(f"{self.operator.value} takes no parameters, got {sorted(self.params)}")
            return None
        if cls is NoiseParams and "base_scale" not in self.params:
            return NoiseParams.for_space(self.space)
        try:
            return cls(**self.params)
        except TypeError as exc:
            raise ParameterError(f"bad parameters for {self.operator.value}: {exc}") from None

    def to_dict(self) -> dict:
        return {"operator": self.operator.value, "space": self.space.name.lower(), "K": self.K, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbSpec":
        return cls(d.get("operator", "channel_shuffle"), d.get("space", "velocity"), int(d.get("K", 1)), dict(d.get("params", {})))


# --- channel shuffle -------------------------------------------------------

def channel_shuffle(z: BatchGrid, rng: SeededRng, shifts=None) -> BatchGrid:
    """Per-sample cyclic channel shift by k in {1, ..., C-1}.

    Output channel c reads input channel (c + k) mod C, so every channel moves.
    """
    B, C = z.shape[:2]
    if C < 2:
        raise OperatorInapplicableError("channel shuffle needs at least 2 channels")
    if shifts is None:
        shifts = rng.integers(1, C - 1, B)
    shifts = np.asarray(shifts, dtype=np.int64).reshape(B)
    idx = (np.arange(C)[None, :] + shifts[:, None]) % C
    out = np.take_along_axis(z.data, idx[:, :, None, None], axis=1)
    return BatchGrid(out, z.space)


# --- crop and resize -------------------------------------------------------

def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a ``(C, h, w)`` array with half-pixel centers."""
    _, h, w = img.shape

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def draw_crop_boxes(B: int, H: int, W: int, p: CropResizeParams, rng: SeededRng) -> list[tuple[int, int, int, int]]:
    """Per-sample crop boxes ``(top, left, h, w)``."""
    boxes = []
    for _ in range(B):
        area = rng.uniform(p.scale_min, p.scale_max) * H * W
        ratio = rng.uniform(p.ar_min, p.ar_max)
        h = min(max(int(round(math.sqrt(area / ratio))), 1), H)
        w = min(max(int(round(math.sqrt(area * ratio))), 1), W)
        if h < MIN_CROP_DIM or w < MIN_CROP_DIM:
            h = max(int(round(0.9 * H)), 1)
            w = max(int(round(0.9 * W)), 1)
        top = int(rng.integers(0, H - h))
        left = int(rng.integers(0, W - w))
        boxes.append((top, left, h, w))
    return boxes


def crop_resize(z: BatchGrid, p: CropResizeParams, rng: SeededRng, boxes=None) -> BatchGrid:
    B, _, H, W = z.shape
    if H * W == 1:
        raise OperatorInapplicableError("crop/resize needs a spatial extent larger than 1x1")
    if boxes is None:
        boxes = draw_crop_boxes(B, H, W, p, rng)
    out = np.empty_like(z.data)
    for i, (top, left, h, w) in enumerate(boxes):
        out[i] = resize_bilinear(z.data[i, :, top:top + h, left:left + w], H, W)
    return BatchGrid(out, z.space)


# --- cutmix ---------------------------------------------------------------

def random_derangement(n: int, rng: SeededRng) -> np.ndarray:
    """Uniform random permutation with no fixed points (rejection sampling)."""
    if n < 2:
        raise OperatorInapplicableError("a derangement needs at least 2 elements")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def draw_cutmix_boxes(B: int, H: int, W: int, alpha: float, rng: SeededRng):
    """Returns the partner permutation and per-sample boxes ``(y1, y2, x1, x2)``."""
    perm = random_derangement(B, rng)
    lam = rng.beta(alpha, B)
    r = np.sqrt(1.0 - lam)
    cx = rng.uniform(0.0, W, B)
    cy = rng.uniform(0.0, H, B)
    boxes = []
    for i in range(B):
        bw, bh = r[i] * W, r[i] * H
        x1 = int(round(np.clip(cx[i] - bw / 2, 0, W)))
        x2 = int(round(np.clip(cx[i] + bw / 2, 0, W)))
        y1 = int(round(np.clip(cy[i] - bh / 2, 0, H)))
        y2 = int(round(np.clip(cy[i] + bh / 2, 0, H)))
        boxes.append((y1, y2, x1, x2))
    return perm, boxes


def cutmix(z: BatchGrid, alpha: float, rng: SeededRng, pairing=None) -> BatchGrid:
    """Paste a box from a deranged partner sample into each sample.

    ``pairing`` overrides the random draw with ``(perm, boxes)``.
    """
    B, _, H, W = z.shape
    if B < 2:
        raise OperatorInapplicableError("cutmix needs a batch of at least 2 (no derangement of one sample)")
    perm, boxes = pairing if pairing is not None else draw_cutmix_boxes(B, H, W, alpha, rng)
    out = z.data.copy()
    for i, (y1, y2, x1, x2) in enumerate(boxes):
        out[i, :, y1:y2, x1:x2] = z.data[perm[i], :, y1:y2, x1:x2]
    return BatchGrid(out, z.space)


# --- gaussian blur --------------------------------------------------------

def gaussian_kernel(k: int, sigma: float) -> np.ndarray:
    r = (k - 1) // 2
    u = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_blur(z: BatchGrid, p: BlurParams) -> BatchGrid:
    """Depthwise Gaussian blur with reflection padding of ``k // 2``."""
    _, _, H, W = z.shape
    if p.k > min(H, W):
        raise ParameterError(f"blur kernel {p.k} exceeds spatial size {(H, W)}")
    pad = p.k // 2
    kern = gaussian_kernel(p.k, p.sigma)
    padded = np.pad(z.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    out = np.zeros_like(z.data)
    for du in range(p.k):
        for dv in range(p.k):
            out += kern[du, dv] * padded[:, :, du:du + H, dv:dv + W]
    return BatchGrid(out, z.space)


# --- gaussian noise -------------------------------------------------------

def noise_scales(z: BatchGrid, p: NoiseParams) -> np.ndarray:
    std = per_sample_std(z)
    smax = std.max()
    if smax == 0.0:
        raise OperatorInapplicableError("gaussian noise: every sample has zero std, scale is undefined")
    return p.base_scale * (1.0 - std / smax)


def gaussian_noise(z: BatchGrid, p: NoiseParams, rng: SeededRng) -> BatchGrid:
    """Add noise whose scale shrinks as a sample's std approaches the batch max."""
    gamma = noise_scales(z, p)
    eps = rng.normal(z.shape)
    return BatchGrid(z.data + gamma[:, None, None, None] * eps, z.space)


# --- color jitter ---------------------------------------------------------

JITTER_STAGES = ("brightness", "contrast", "saturation")


def _jitter_sample(x: np.ndarray, factors: dict, order) -> np.ndarray:
    for stage in order:
        f = factors[stage]
        if stage == "brightness":
            x = x * f
        elif stage == "contrast":
            mu = x.mean()
            x = (x - mu) * f + mu
        else:
            g = x.mean(axis=0, keepdims=True)
            x = (x - g) * f + g
    return x


def color_jitter(z: BatchGrid, p: JitterParams, rng: SeededRng, space: Space | None = None, draws=None) -> BatchGrid:
    """Brightness, contrast and saturation factors in random order, per sample.

    ``draws`` overrides the random factors with a list of ``(factors, order)``.
    In image space values are mapped to [0, 1], clamped, and mapped back.
    """
    space = Space.parse(space) if space is not None else z.space
    B = z.batch
    if draws is None:
        draws = []
        for _ in range(B):
            lam = rng.uniform(1.0 - p.delta, 1.0 + p.delta, 3)
            order = [JITTER_STAGES[j] for j in rng.permutation(3)]
            draws.append((dict(zip(JITTER_STAGES, lam)), order))
    image = space == Space.IMAGE
    src = z.data / PIXEL_MAX if image else z.data
    out = np.empty_like(src)
    for i, (factors, order) in enumerate(draws):
        out[i] = _jitter_sample(src[i], factors, order)
    if image:
        out = np.clip(out, 0.0, 1.0) * PIXEL_MAX
    return BatchGrid(out, z.space)


# --- dispatch -------------------------------------------------------------

def apply_operator(z: BatchGrid, spec: PerturbSpec, rng: SeededRng) -> BatchGrid:
    params = spec.param_record()
    op = spec.operator
    if op is Operator.CHANNEL_SHUFFLE:
        return channel_shuffle(z, rng)
    if op is Operator.CROP_RESIZE:
        return crop_resize(z, params, rng)
    if op is Operator.CUTMIX:
        return cutmix(z, params.alpha, rng)
    if op is Operator.GAUSSIAN_BLUR:
        return gaussian_blur(z, params)
    if op is Operator.GAUSSIAN_NOISE:
        return gaussian_noise(z, params, rng)
    if op is Operator.COLOR_JITTER:
        return color_jitter(z, params, rng, spec.space)
    return z


# --- encoders -------------------------------------------------------------

class PixelEncoder:
    """Image in pixel units -> latent in [0, 1] units (identity up to scale)."""

    name = "identity"

    def encode(self, image: BatchGrid) -> BatchGrid:
        return BatchGrid(image.data / PIXEL_MAX, Space.LATENT)

    def latent_shape(self, image_shape):
        return tuple(image_shape)


class AvgPoolEncoder:
    """2x2 average pooling followed by pixel normalization."""

    name = "avgpool2"

    def encode(self, image: BatchGrid) -> BatchGrid:
        B, C, H, W = image.shape
        if H % 2 or W % 2:
            raise OperatorInapplicableError(f"avgpool2 encoder needs even spatial size, got {(H, W)}")
        pooled = image.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))
        return BatchGrid(pooled / PIXEL_MAX, Space.LATENT)

    def latent_shape(self, image_shape):
        B, C, H, W = image_shape
        return (B, C, H // 2, W // 2)


ENCODERS = {"identity": PixelEncoder, "avgpool2": AvgPoolEncoder}


def make_encoder(name: str):
    try:
        return ENCODERS[name]()
    except KeyError:
        raise ParameterError(f"unknown encoder {name!r}; expected one of {sorted(ENCODERS)}") from None


def images_from_latents(x: BatchGrid) -> BatchGrid:
    """Inverse of :class:`PixelEncoder`, used when no image batch is available."""
    return BatchGrid(x.data * PIXEL_MAX, Space.IMAGE)


# --- negative candidate sets ----------------------------------------------

@dataclass(frozen=True)
class NegativeCandidateSet:
    positive: BatchGrid
    negatives: tuple
    shared_eps: BatchGrid
    shared_t: np.ndarray

    @property
    def K(self) -> int:
        return len(self.negatives)

    def negatives_array(self) -> np.ndarray:
        """Stacked negatives, shape ``(K, B, C, H, W)``."""
        return np.stack([n.data for n in self.negatives])


def build_negatives(
    x_pos: BatchGrid,
    eps: BatchGrid,
    t,
    v_pos: BatchGrid,
    spec: PerturbSpec,
    sched: Schedule,
    rng: SeededRng,
    encoder=None,
    image_pos: Optional[BatchGrid] = None,
) -> NegativeCandidateSet:
    """Positive velocity plus K perturbed negatives sharing the same (eps, t).

    Velocity space perturbs ``v_pos`` directly. Latent and image space
    perturb the clean latent (or image, then encode) and recompute the
    target velocity with the original noise and time.
    """
    tt = as_time(t, x_pos.batch)
    negatives = []
    for _ in range(spec.K):
        if spec.space == Space.VELOCITY:
            v_neg = apply_operator(v_pos, spec, rng).retag(Space.VELOCITY)
        else:
            if spec.space == Space.LATENT:
                x_neg = apply_operator(x_pos, spec, rng)
            else:
                enc = encoder if encoder is not None else PixelEncoder()
                img = image_pos if image_pos is not None else images_from_latents(x_pos)
                x_neg = enc.encode(apply_operator(img, spec, rng))
                if x_neg.shape != x_pos.shape:
                    raise ParameterError(f"encoder output {x_neg.shape} does not match latent shape {x_pos.shape}")
            v_neg = BatchGrid(sched.dalpha(tt) * x_neg.data + sched.dsigma(tt) * eps.data, Space.VELOCITY)
        negatives.append(v_neg)
    return NegativeCandidateSet(v_pos, tuple(negatives), eps, tt.reshape(-1).copy())

