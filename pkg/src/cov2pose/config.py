"""Run configuration: a nested YAML file plus ``key=value`` overrides.

Top-level keys: ``variant``, ``seed``, ``lr_stiefel``, ``lr_adam``, ``lambda``,
``batch_size``, ``epochs``, ``patience``, ``factor``, ``output_dir`` and the
sections ``dataset``, ``backbone``, ``head`` (holds ``eps_reeig``) and
``analysis``.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .errors import ConfigError
from .model import BackboneConfig, HeadConfig, ModelConfig, Variant

OUT_ENV = "COV2POSE_OUT"
DEFAULT_OUT = "cov2pose_runs"


def default_output_dir():
    return os.environ.get(OUT_ENV) or DEFAULT_OUT


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 500
    seed: int = 0
    # load from here instead of generating in memory
    data_dir: str = ""

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 1 or self.n_test < 1:
            raise ConfigError("every split needs at least one sample")


@dataclass(frozen=True)
class AnalysisConfig:
    n_pairs: int = 20000
    bins: int = 10
    seed: int = 0
    split: str = "test"

    def __post_init__(self):
        if self.n_pairs < 1 or self.bins < 1:
            raise ConfigError("analysis needs at least one pair and one bin")


@dataclass(frozen=True)
class RunConfig:
    variant: Variant = Variant.FULL6D
    seed: int = 0
    lr_stiefel: float = 1e-2
    lr_adam: float = 1e-4
    lam: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    patience: int = 4
    factor: float = 0.5
    output_dir: str = field(default_factory=default_output_dir)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def __post_init__(self):
        object.__setattr__(self, "variant", _variant(self.variant))
        if not (self.lr_stiefel > 0 and self.lr_adam > 0):
            raise ConfigError("learning rates must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if not 0 < self.factor < 1 or self.patience < 0:
            raise ConfigError("scheduler needs 0 < factor < 1 and patience >= 0")
        self.model_config()

    def model_config(self):
        cfg = ModelConfig(self.variant, self.backbone, self.head)
        if self.variant != Variant.MLP:
            cfg.head_dims()
        return cfg

    def to_dict(self):
        d = {("lambda" if k == "lam" else k): v for k, v in asdict(self).items()}
        d["variant"] = self.variant.value
        return _plain(d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = _coerce(cls, d)
        sections = {"dataset": DatasetConfig, "backbone": BackboneConfig, "head": HeadConfig, "analysis": AnalysisConfig}
        for key, typ in sections.items():
            if key in d:
                d[key] = _section(typ, d[key], key)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text):
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        if d is not None and not isinstance(d, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(d)

    def with_overrides(self, items):
        """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
        d = self.to_dict()
        for item in items:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                value = yaml.safe_load(raw)
            except yaml.YAMLError:
                value = raw
            node = d
            parts = key.strip().split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config section {p!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(d)

    def replace(self, **kw):
        return replace(self, **kw)


def _variant(v):
    if isinstance(v, Variant):
        return v
    try:
        return Variant(v)
    except ValueError:
        names = ", ".join(x.value for x in Variant)
        raise ConfigError(f"unknown variant {v!r} (choose from {names})") from None


def _section(typ, value, name):
    if isinstance(value, typ):
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(typ)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    v = _coerce(typ, {k: tuple(x) if isinstance(x, list) else x for k, x in value.items()})
    try:
        return typ(**v)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _coerce(typ, d):
    # YAML 1.1 reads "1e-3" as a string; numeric fields take their default's type
    out = dict(d)
    for f in fields(typ):
        if f.name not in out or f.type not in (int, float, str):
            continue
        val = out[f.name]
        try:
            if f.type is int:
                if isinstance(val, bool) or float(val) != int(float(val)):
                    raise ValueError
                out[f.name] = int(float(val))
            elif f.type is float and not isinstance(val, bool):
                out[f.name] = float(val)
            elif f.type is str:
                out[f.name] = "" if val is None else str(val)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {f.name!r}: {val!r}") from None
    return out


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def load_config(path=None, overrides=()):
    if path:
        try:
            with open(path) as fh:
                cfg = RunConfig.from_yaml(fh.read())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
    else:
        cfg = RunConfig()
    return cfg.with_overrides(overrides) if overrides else cfg
