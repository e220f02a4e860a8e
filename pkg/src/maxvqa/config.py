"""Run configuration: a YAML file plus ``section.key=value`` overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dimensions import validate_codes
from .errors import ConfigError
from .features import ExtractionSettings
from .fragments import DEFAULT_FRAMES, DEFAULT_GRID, DEFAULT_PATCH
from .training import TrainConfig


@dataclass
class Paths:
    videos: str | None = None
    cache: str = "cache"
    annotations: str | None = None
    targets: str | None = None
    checkpoint: str = "checkpoints/maxvqa.pt"
    output: str = "outputs"


@dataclass
class FragmentParams:
    grid_count: int = DEFAULT_GRID
    patch_size: int = DEFAULT_PATCH
    num_frames: int = DEFAULT_FRAMES
    seed: int = 0


@dataclass
class BackboneParams:
    dual_encoder: str = "stub"
    fragment_encoder: str = "stub"
    fragment_checkpoint: str | None = None


@dataclass
class ModelParams:
    hidden_dim: int | None = None
    dropout: float = 0.5
    per_axis_context: bool = False


@dataclass
class SplitParams:
    mode: str = "maxwell"  # maxwell | random | file
    k: int = 10
    test_fraction: float = 0.2
    seed: int = 0
    test_size: int = 909
    test_ids: str | None = None

    def __post_init__(self):
        if self.mode not in ("maxwell", "random", "file"):
            raise ConfigError(f"split.mode must be maxwell, random or file, got {self.mode!r}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("split.test_fraction must lie in (0, 1)")


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    fragments: FragmentParams = field(default_factory=FragmentParams)
    backbones: BackboneParams = field(default_factory=BackboneParams)
    model: ModelParams = field(default_factory=ModelParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitParams = field(default_factory=SplitParams)
    axes: list[str] | None = None
    workers: int = 2

    def extraction(self) -> ExtractionSettings:
        f, b = self.fragments, self.backbones
        return ExtractionSettings(b.dual_encoder, b.fragment_encoder, f.grid_count, f.patch_size,
                                  f.num_frames, f.seed)

    def validate(self, require=()) -> "RunConfig":
        if self.axes is not None:
            self.axes = validate_codes(self.axes)
        if self.train.axis_subset is not None:
            self.train.axis_subset = validate_codes(self.train.axis_subset)
        for name in ("videos", "annotations", "targets"):
            value = getattr(self.paths, name)
            if name in require and value is None:
                raise ConfigError(f"paths.{name} is required for this command")
            if value is not None and not Path(value).exists():
                raise ConfigError(f"paths.{name} does not exist: {value}")
        if self.split.test_ids is not None and not Path(self.split.test_ids).exists():
            raise ConfigError(f"split.test_ids does not exist: {self.split.test_ids}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["loss_weights"] = list(d["train"]["loss_weights"])
        return d


_SECTIONS = {"paths": Paths, "fragments": FragmentParams, "backbones": BackboneParams,
             "model": ModelParams, "train": TrainConfig, "split": SplitParams}


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, None) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {name} must be a mapping")
        kwargs[name] = _build(cls, section, name)
    for key in ("axes", "workers"):
        if key in data:
            kwargs[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown top-level keys: {sorted(data)}")
    return RunConfig(**kwargs)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    data = dict(data or {})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-mapping {dotted}")
        node[keys[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(apply_overrides(data, overrides))
