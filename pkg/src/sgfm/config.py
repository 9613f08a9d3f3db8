"""JSON run configuration with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .distributions import DistributionSpec, GuidanceLoss, derive_seed, make_distribution
from .flow import IntegrationConfig
from .guidance import SamplerConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "derive_seed"]


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


@dataclass
class TaskConfig:
    source: dict = field(default_factory=lambda: {"name": "uniform_square"})
    target: dict = field(default_factory=lambda: {"name": "eight_gaussians"})
    loss: str = "eight_gaussian_task"
    loss_scale: float = 1.0

    def source_spec(self) -> DistributionSpec:
        return make_distribution(**self.source)

    def target_spec(self) -> DistributionSpec:
        return make_distribution(**self.target)

    def guidance_loss(self) -> GuidanceLoss:
        return GuidanceLoss(self.loss, self.loss_scale)


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [64, 64, 64, 64])
    activation: str = "silu"
    epochs: int = 20000
    batch_size: int = 256
    lr: float = 1e-3
    coupling: str = "ot"


@dataclass
class GuideConfig:
    n: int = 1000
    trajectory: bool = False
    trajectory_particles: int = 100


@dataclass
class EvalConfig:
    budgets: list = field(default_factory=lambda: [100, 1000, 10000])
    seeds: list = field(default_factory=lambda: list(range(10)))
    nfe: list = field(default_factory=lambda: [2, 5, 10, 50, 100])
    samplers: dict = field(default_factory=lambda: {"is": {"variant": "is"}})
    n_generated: int = 1000
    n_oracle: int = 10000
    oracle_proposals: int = 100000
    timing: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    integration: dict = field(default_factory=lambda: {"scheme": "euler", "steps": 20})
    sampler: dict = field(default_factory=lambda: {"variant": "is"})
    guide: GuideConfig = field(default_factory=GuideConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def integration_config(self, steps: Optional[int] = None) -> IntegrationConfig:
        cfg = dict(self.integration)
        if steps is not None:
            cfg["steps"] = steps
        return IntegrationConfig(**cfg)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(**self.sampler)

    def eval_samplers(self) -> dict[str, SamplerConfig]:
        return {name: SamplerConfig(**cfg) for name, cfg in self.eval.samplers.items()}

    def sub_seed(self, name: str, index: int = 0) -> int:
        return derive_seed(self.seed, name, index)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short hash of everything that affects results; the output location is left out."""
        content = self.to_dict()
        content.pop("output_dir")
        blob = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {"task": TaskConfig, "model": ModelConfig, "guide": GuideConfig, "eval": EvalConfig}
_TYPES = {int: (int,), float: (int, float), str: (str,), bool: (bool,), list: (list,), dict: (dict,)}


def _check_type(value, default, key):
    expected = type(default)
    allowed = _TYPES.get(expected, (expected,))
    if isinstance(value, bool) and expected is not bool:
        raise ConfigError(f"{key}: expected {expected.__name__}, got bool", key)
    if not isinstance(value, allowed):
        raise ConfigError(f"{key}: expected {expected.__name__}, got {type(value).__name__}", key)


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected an object", prefix)
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError(f"{path}: unknown key", path)
        if key in _SECTIONS and cls is RunConfig:
            kwargs[key] = _build(_SECTIONS[key], value, path)
        else:
            _check_type(value, getattr(defaults, key), path)
            kwargs[key] = value
    return cls(**kwargs)


def _validate(cfg: RunConfig):
    checks = [
        ("task.source", cfg.task.source_spec),
        ("task.target", cfg.task.target_spec),
        ("task.loss", cfg.task.guidance_loss),
        ("integration", cfg.integration_config),
        ("sampler", cfg.sampler_config),
        ("eval.samplers", cfg.eval_samplers),
    ]
    for key, build in checks:
        try:
            build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}", key) from exc
    if cfg.model.coupling not in ("ot", "independent"):
        raise ConfigError("model.coupling: must be 'ot' or 'independent'", "model.coupling")
    if cfg.model.epochs < 0:
        raise ConfigError("model.epochs: must be >= 0", "model.epochs")
    if cfg.model.batch_size < 1:
        raise ConfigError("model.batch_size: must be >= 1", "model.batch_size")
    if cfg.guide.n < 1:
        raise ConfigError("guide.n: must be >= 1", "guide.n")


def parse_config(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_config(data)
