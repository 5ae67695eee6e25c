"""Run configuration: nested dataclasses with a plain-text ``section.key = value`` format.

Example file::

    # desk-scale 2x run
    model.depth = 3
    train.batch_size = 4
    loss.variant = R1
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossConfig

ARCH_SECTIONS = ("model", "disc")


@dataclass
class ModelConfig:
    k: int = 8
    depth: int = 5
    heads: int = 3
    mlp_ratio: float = 4.0
    dropout: float = 0.0
    residual_mode: str = "paper"


@dataclass
class DiscConfig:
    d: int = 192
    depth: int = 5
    heads: int = 3
    mlp_ratio: float = 4.0
    dropout: float = 0.0


@dataclass
class TrainConfig:
    scale: int = 2
    compose: str = "frozen"
    crop_lr: int = 64
    batch_size: int = 4
    max_epochs: int = 200
    steps_per_epoch: int = 25
    val_batches: int = 2
    lr0: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_patience: int = 30
    plateau_factor: float = 0.2
    plateau_tol: float = 1e-6
    clip_norm: float = 0.0
    fused_bce: bool = True
    seed: int = 0
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.compose not in ("frozen", "joint"):
            raise ValueError(f"compose must be 'frozen' or 'joint', got {self.compose!r}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau_factor must lie in (0, 1), got {self.plateau_factor}")

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)


@dataclass
class DataConfig:
    root: str = ""
    split: str = "train"
    val_split: str = "valid"
    kernel: str = "bicubic"
    flip: bool = False
    rotate: bool = False


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        return cls().with_values({f"{s}.{k}": v for s, vals in d.items() for k, v in vals.items()})

    def with_value(self, dotted: str, value) -> "Config":
        return self.with_values({dotted: value})

    def with_values(self, items: dict) -> "Config":
        """Set several dotted keys; each section is rebuilt (and validated) once."""
        grouped: dict[str, dict] = {}
        for dotted, value in items.items():
            try:
                section, key = dotted.split(".", 1)
                sub = getattr(self, section)
            except (ValueError, AttributeError):
                raise ValueError(f"unknown config key {dotted!r}") from None
            names = {f.name for f in dataclasses.fields(sub)}
            if key not in names:
                raise ValueError(f"unknown config key {dotted!r}")
            kind = type(getattr(sub, key))
            grouped.setdefault(section, {})[key] = _coerce(value, kind, dotted)
        cfg = self
        for section, values in grouped.items():
            cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **values)})
        return cfg

    def apply_overrides(self, overrides: list[str]) -> "Config":
        items = {}
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"override {item!r} is not of the form key=value")
            key, value = item.split("=", 1)
            items[key.strip()] = value.strip()
        return self.with_values(items)

    def to_text(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            for key, value in values.items():
                lines.append(f"{section}.{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def arch_hash(self) -> str:
        """Digest of everything that determines tensor shapes."""
        arch = {s: self.to_dict()[s] for s in ARCH_SECTIONS}
        arch["train.crop_lr"] = self.train.crop_lr
        arch["train.scale"] = self.train.scale
        arch["train.compose"] = self.train.compose
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()

    def arch_differences(self, other: "Config") -> list[str]:
        diffs = []
        mine, theirs = self.to_dict(), other.to_dict()
        for s in ARCH_SECTIONS:
            for key in mine[s]:
                if mine[s][key] != theirs[s][key]:
                    diffs.append(f"{s}.{key}: {theirs[s][key]!r} != {mine[s][key]!r}")
        for key in ("crop_lr", "scale", "compose"):
            if mine["train"][key] != theirs["train"][key]:
                diffs.append(f"train.{key}: {theirs['train'][key]!r} != {mine['train'][key]!r}")
        return diffs


def _coerce(value, kind, key):
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    if kind is bool:
        if isinstance(value, str) and value.lower() in ("1", "true", "yes", "on"):
            return True
        if isinstance(value, str) and value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ValueError(f"{key}: cannot interpret {value!r} as {kind.__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> Config:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return Config().with_values(items)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> tuple[Config, str]:
    """Return the config and the verbatim source text (file + overrides)."""
    text = Path(path).read_text() if path else ""
    cfg = parse_config_text(text)
    overrides = overrides or []
    cfg = cfg.apply_overrides(overrides)
    if overrides:
        text += "".join(f"# override\n{o}\n" for o in overrides)
    return cfg, text
