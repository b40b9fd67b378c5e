"""Run configuration: defaults, flat ``section.key=value`` files, and overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

from .corpus import SyntheticSpec
from .losses import LossWeights
from .nets import NetConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    data: Optional[str] = None
    attr_file: Optional[str] = None
    out: Optional[str] = None
    resume: Optional[str] = None


@dataclass
class MetricsConfig:
    feature_backend: str = "random-projection"
    perceptual_backend: str = "blur-l1"
    n_exemplars: int = 10
    split_fraction: float = 0.9


@dataclass
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    paths: PathsConfig = field(default_factory=PathsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    SECTIONS = ("net", "train", "loss", "paths", "metrics")

    def to_flat(self) -> dict[str, Any]:
        flat = {}
        for section in self.SECTIONS:
            for f in fields(getattr(self, section)):
                flat[f"{section}.{f.name}"] = getattr(getattr(self, section), f.name)
        return flat

    def dumps(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.to_flat().items())

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_flat(cls, values: dict[str, str], base: Optional["RunConfig"] = None) -> "RunConfig":
        """Apply string overrides on top of ``base`` (defaults if omitted)."""
        base = base or cls()
        sections = {s: {f.name: getattr(getattr(base, s), f.name) for f in fields(getattr(base, s))}
                    for s in cls.SECTIONS}
        for key, raw in values.items():
            section, _, name = key.partition(".")
            if section not in sections or name not in sections[section]:
                raise ConfigError(f"unknown config key {key!r}")
            hint = get_type_hints(type(getattr(base, section)))[name]
            sections[section][name] = _coerce(raw, hint, key)
        # a fresh resolution should re-derive discriminator scales unless set explicitly
        if "net.resolution" in values and "net.disc_scales" not in values:
            sections["net"]["disc_scales"] = None
        try:
            return cls(NetConfig(**sections["net"]), TrainConfig(**sections["train"]),
                       LossWeights(**sections["loss"]), PathsConfig(**sections["paths"]),
                       MetricsConfig(**sections["metrics"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(raw, hint, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if get_origin(hint) is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        if raw == "" or raw.lower() == "none":
            return None
        hint = args[0]
    try:
        if hint is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: Optional[dict[str, str]] = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = RunConfig.from_flat(parse_config_text(text), cfg)
    if overrides:
        cfg = RunConfig.from_flat(overrides, cfg)
    return cfg


def synth_snapshot(spec: SyntheticSpec) -> str:
    d = dataclasses.asdict(spec)
    d["styles"] = ",".join(spec.styles)
    return "".join(f"synth.{k}={v}\n" for k, v in d.items())
