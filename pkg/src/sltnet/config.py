"""Run configuration: flat ``section.key = value`` text with ``#`` comments.

Sections map onto dataclasses: ``net`` (NetworkConfig), ``neuron``
(NeuronConfig), ``loss`` (LossConfig), ``optim`` (OptimConfig), ``data``
(DataConfig) and ``train`` (TrainConfig). Unknown keys are rejected.
Tuple-valued keys use commas, and semicolons between rows
(``net.dilations = 1,2,5; 1,2,5; 2,5,9``).
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .loss import LossConfig
from .network import NetworkConfig
from .neuron import NeuronConfig
from .optim import OptimConfig


@dataclass
class DataConfig:
    dt_us: int = 50_000
    bins: int = 5
    val_fraction: float = 0.2
    hflip: bool = False

    def __post_init__(self):
        if self.dt_us < 1 or self.bins < 1:
            raise ConfigError("dt_us and bins must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")


@dataclass
class TrainConfig:
    # stop once validation mIoU reaches this value (0 disables)
    target_miou: float = 0.0
    # wall-clock budget in minutes (0 = unlimited); checked between epochs
    max_minutes: float = 0.0
    eval_batch: int = 32

    def __post_init__(self):
        if not 0.0 <= self.target_miou <= 1.0 or self.max_minutes < 0 or self.eval_batch < 1:
            raise ConfigError("invalid train section values")


SECTIONS = {
    "net": NetworkConfig,
    "neuron": NeuronConfig,
    "loss": LossConfig,
    "optim": OptimConfig,
    "data": DataConfig,
    "train": TrainConfig,
}

ABLATIONS = {
    "no-stb": ("net.enable_stb", "false"),
    "no-fe": ("net.enable_fe", "false"),
    "no-fusion": ("net.enable_skip_fusion", "false"),
    "no-early-loss": ("loss.lambda2", "0"),
    "no-ohem": ("loss.ohem_k", "1.0"),
    "no-evaf": ("neuron.k_max", None),
}
ABLATION_KEYS = {"shortcut": "net.shortcut", "k": "loss.ohem_k"}


@dataclass
class RunConfig:
    net: NetworkConfig = field(default_factory=NetworkConfig)
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_text(self) -> str:
        lines = []
        for sec in SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                lines.append(f"{sec}.{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(",".join(str(x) for x in row) for row in v)
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                return tuple(tuple(int(x) for x in row.split(",")) for row in text.split(";"))
            return tuple(int(x) for x in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def parse_pairs(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def resolve(pairs: list[tuple[str, str]], base: RunConfig | None = None) -> RunConfig:
    """Apply key/value overrides on top of ``base`` (defaults if None), validating every section."""
    base = base or RunConfig()
    values = {sec: dataclasses.asdict(getattr(base, sec)) for sec in SECTIONS}
    for key, text in pairs:
        sec, _, name = key.partition(".")
        if sec not in SECTIONS or name not in values[sec]:
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(SECTIONS[sec](), name)
        values[sec][name] = _parse_value(text, default, key)
    built = {}
    for sec, cls in SECTIONS.items():
        try:
            built[sec] = cls(**values[sec])
        except ConfigError:
            raise
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{sec}: {e}") from None
    return RunConfig(**built)


def loads(text: str, source: str = "<config>") -> RunConfig:
    return resolve(parse_pairs(text, source))


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return loads(f.read(), str(path))


def ablation_pairs(item: str, cfg: RunConfig) -> list[tuple[str, str]]:
    """Translate an ablation name (``no-stb``) or ``key=value`` (``shortcut=sew``, ``k=1.0``)."""
    if "=" in item:
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in ABLATION_KEYS:
            raise ConfigError(f"unknown ablation key {key!r}; expected one of {sorted(ABLATION_KEYS)}")
        return [(ABLATION_KEYS[key], value)]
    if item not in ABLATIONS:
        raise ConfigError(f"unknown ablation {item!r}; expected one of {sorted(ABLATIONS)} or key=value")
    key, value = ABLATIONS[item]
    if value is None:
        value = repr(cfg.neuron.k_min)
    return [(key, value)]
