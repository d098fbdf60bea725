"""Run configuration: nested dataclasses that round-trip through JSON."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import ParameterError, VecorError
from .objective import VecorConfig, validate_config
from .perturb import PerturbSpec, make_encoder
from .sample import SamplerConfig


class ConfigError(ParameterError):
    pass


@dataclass
class DatasetConfig:
    name: str = "gauss2"
    size: Optional[int] = None  # None: fresh draws every step
    encoder: str = "identity"


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [256, 256, 256])
    activation: str = "tanh"
    n_freqs: int = 8


@dataclass
class OptimConfig:
    kind: str = "adam"
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class PerturbBlock:
    operator: str = "channel_shuffle"
    space: str = "velocity"
    params: dict = field(default_factory=dict)


@dataclass
class VecorBlock:
    enabled: bool = False
    lam: float = 0.05
    K: int = 1
    perturb: PerturbBlock = field(default_factory=PerturbBlock)


@dataclass
class EvalConfig:
    n_gen: int = 10000
    n_ref: int = 10000
    n_projections: int = 256


@dataclass
class RunConfig:
    name: str = "run"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: str = "linear"
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    vecor: VecorBlock = field(default_factory=VecorBlock)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    steps: int = 5000
    batch_size: Optional[int] = None  # None: 128 for point datasets, 32 for grid8
    checkpoint_every: int = 0  # 0: final checkpoint only
    out_dir: str = "runs"
    deterministic_log: bool = True  # wall_ms column written as 0 so logs are byte-stable

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def vecor_config(self) -> VecorConfig:
        return VecorConfig(self.vecor.lam, self.vecor.K)

    def perturb_spec(self) -> PerturbSpec:
        p = self.vecor.perturb
        return PerturbSpec(p.operator, p.space, self.vecor.K, dict(p.params))

    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 32 if self.dataset.name == "grid8" else 128

    def replace(self, **changes) -> "RunConfig":
        return from_dict(_deep_update(self.to_dict(), changes))

    def validate(self) -> "RunConfig":
        from .train import DATASETS  # local import: train depends on this module

        if self.dataset.name not in DATASETS:
            raise ConfigError(f"dataset.name: unknown dataset {self.dataset.name!r}; expected one of {sorted(DATASETS)}")
        if self.dataset.size is not None and self.dataset.size < 1:
            raise ConfigError("dataset.size: must be positive or null")
        _wrap("dataset.encoder", make_encoder, self.dataset.encoder)
        if self.schedule != "linear":
            raise ConfigError(f"schedule: only 'linear' is implemented, got {self.schedule!r}")
        if self.optimizer.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer.kind: expected 'adam' or 'sgd', got {self.optimizer.kind!r}")
        if not self.optimizer.lr > 0:
            raise ConfigError("optimizer.lr: must be positive")
        if self.model.activation != "tanh":
            raise ConfigError(f"model.activation: only 'tanh' is supported, got {self.model.activation!r}")
        if self.steps < 0:
            raise ConfigError("steps: must be >= 0")
        if self.effective_batch_size() < 1:
            raise ConfigError("batch_size: must be positive")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every: must be >= 0")
        _wrap("sampler", self.sampler.validate)
        if self.vecor.enabled:
            _wrap("vecor", validate_config, self.vecor_config())
            _wrap("vecor.perturb", self.perturb_spec)
        return self


def _wrap(path, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except VecorError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _deep_update(base: dict, changes: dict) -> dict:
    out = dict(base)
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown field")
    kwargs = {}
    for name, value in data.items():
        sub = known[name]
        default = sub.default_factory() if sub.default_factory is not dataclasses.MISSING else sub.default
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, where)
        else:
            kwargs[name] = _coerce(default, value, where)
    return cls(**kwargs)


def _coerce(default, value, where):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) or where in ("dataset.size", "batch_size"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(f"{where}: expected an object, got {value!r}")
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(cfg.to_json())
