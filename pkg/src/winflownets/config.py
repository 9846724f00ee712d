"""Run configuration: dataclasses plus a flat ``section.key = value`` text format.

Example::

    # desk-scale point robot
    env.kind = point_sparse
    train.warmup_steps = 5000
    train.hidden = 64, 64
"""

import dataclasses
from dataclasses import dataclass, field, fields, replace

from .envs import EnvConfig
from .errors import ConfigError
from .flow import FlowLossConfig

VARIANTS = ("winflownets", "v1_no_warmup", "v2_separate_buffers", "cflownets_pretrained")
VARIANT_ALIASES = {"v1": "v1_no_warmup", "v2": "v2_separate_buffers",
                   "cflownets": "cflownets_pretrained"}


def canonical_variant(name):
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return name


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "winflownets"
    seed: int = 0
    warmup_steps: int = 100_000
    total_steps: int = 1_000_000
    eta0: float = 1e-4
    eta_max: float = 1e-3
    eta_increment: float = 0.0  # 0 -> linear ramp reaching eta_max at the end of warm-up
    lr_flow: float = 1e-3
    lr_retrieval: float = 1e-3
    batch_size: int = 256
    retrieval_batch_size: int = 256
    updates_per_episode: int = 1
    warmup_updates_per_episode: int = 0  # 0 -> updates_per_episode
    eval_interval: int = 10_000
    eval_start: int = -1  # -1 -> warmup_steps; evaluations at eval_start + k * eval_interval
    eval_episodes: int = 10
    gamma: float = 1.0  # reported returns are undiscounted; kept for completeness
    buffer_capacity: int = 100_000
    hidden: tuple = (256, 256)
    activation: str = "relu"
    pretrain_transitions: int = 100_000
    pretrain_epochs: int = 50
    pretrain_lr: float = 1e-3
    stability_window: int = 10
    stability_rel_threshold: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.warmup_steps < 0 or self.warmup_steps > self.total_steps:
            raise ConfigError("need 0 <= warmup_steps <= total_steps")
        for name in ("eta0", "eta_max", "lr_flow", "lr_retrieval", "pretrain_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.eta_increment < 0:
            raise ConfigError("eta_increment must be >= 0")
        if self.eval_interval < 1 or self.eval_episodes < 2:
            raise ConfigError("eval_interval must be >= 1 and eval_episodes >= 2")
        if min(self.batch_size, self.retrieval_batch_size, self.updates_per_episode,
               self.buffer_capacity) < 1:
            raise ConfigError("batch sizes, updates_per_episode and buffer_capacity must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")

    @property
    def first_eval_offset(self):
        return self.warmup_steps if self.eval_start < 0 else self.eval_start


@dataclass(frozen=True)
class Config:
    env: EnvConfig = field(default_factory=EnvConfig)
    flow: FlowLossConfig = field(default_factory=FlowLossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def override(self, **sections):
        """``cfg.override(train={"seed": 3})`` -> new validated Config."""
        kw = {}
        for name, values in sections.items():
            if name == "env" and "kind" in values and "horizon" not in values:
                values = {**values, "horizon": 0}
            if values:
                kw[name] = _build(type(getattr(self, name)), {**_asdict(getattr(self, name)), **values})
        return replace(self, **kw)


SECTIONS = {"env": EnvConfig, "flow": FlowLossConfig, "train": TrainConfig}

DESK_SCALE = {
    "train": {"warmup_steps": 5_000, "total_steps": 50_000, "eval_interval": 1_000,
              "buffer_capacity": 50_000, "hidden": (64, 64), "batch_size": 128,
              "retrieval_batch_size": 128, "pretrain_transitions": 10_000,
              "warmup_updates_per_episode": 32},
    "flow": {"M": 50, "K": 16},
}


def _asdict(obj):
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _build(cls, values):
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _coerce(cls, key, text):
    ftype = {f.name: f for f in fields(cls)}[key]
    default = ftype.default if ftype.default is not dataclasses.MISSING else None
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text.replace("_", ""))
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text, base=None):
    base = base or Config()
    updates = {name: {} for name in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates[section][name] = _coerce(SECTIONS[section], name, value)
    return base.override(**updates)


def load_config(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def _render(v):
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_text(cfg):
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_render(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def desk_scale(cfg=None):
    cfg = cfg or Config()
    return cfg.override(**DESK_SCALE)
