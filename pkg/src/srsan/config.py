"""Run configuration: defaults, dataset presets, INI config files, flag overrides.

Config files use ``key = value`` lines grouped in ``[model]``, ``[train]``
and ``[data]`` sections; keys are the ``RunConfig`` field names.  Command
line flags always win over file values.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields

from .data import DEFAULT_HOLDOUT_DAYS, MS_PER_DAY, PRESETS, EventFormat
from .model import ModelConfig
from .trainer import TrainConfig

# best settings per dataset from the hyper-parameter study
MODEL_PRESETS = {
    "yoochoose": {"d": 96, "heads": 2, "layers": 1, "ffn_mult": 4},
    "diginetica": {"d": 48, "heads": 8, "layers": 1, "ffn_mult": 4},
}

SECTIONS = {
    "model": ("d", "heads", "layers", "ffn_mult", "predict", "loss", "scale_per_head"),
    "train": ("lr", "decay_factor", "decay_every", "batch", "l2", "epochs", "k", "seed"),
    "data": ("preset", "fraction", "holdout_days", "min_item_count", "min_session_len",
             "max_malformed", "delimiter", "session_col", "time_col", "item_col",
             "time_format", "time_offset_col", "header"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    d: int = 96
    heads: int = 2
    layers: int = 1
    ffn_mult: int = 4
    predict: str = "last"
    loss: str = "ce"
    scale_per_head: bool = False
    # training
    lr: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 3
    batch: int = 100
    l2: float = 1e-5
    epochs: int = 12
    k: int = 20
    seed: int = 0
    # data
    preset: str = "yoochoose"
    fraction: float = 1.0
    holdout_days: float | None = None
    min_item_count: int = 5
    min_session_len: int = 2
    max_malformed: float = 0.01
    delimiter: str | None = None
    session_col: int | None = None
    time_col: int | None = None
    item_col: int | None = None
    time_format: str | None = None
    time_offset_col: int | None = None
    header: bool | None = None

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, d=self.d, heads=self.heads, layers=self.layers,
                           ffn_mult=self.ffn_mult, prediction_mode=self.predict,
                           loss_mode=self.loss, scale_per_head=self.scale_per_head, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr, decay_factor=self.decay_factor, decay_every=self.decay_every,
                           batch_size=self.batch, l2=self.l2, epochs=self.epochs, k=self.k,
                           seed=self.seed)

    def event_format(self) -> EventFormat:
        base = PRESETS.get(self.preset, EventFormat())
        overrides = {name: getattr(self, name)
                     for name in ("delimiter", "session_col", "time_col", "item_col",
                                  "time_format", "time_offset_col", "header")
                     if getattr(self, name) is not None}
        return EventFormat(**{**asdict(base), **overrides})

    def holdout_ms(self) -> int:
        days = self.holdout_days
        if days is None:
            days = DEFAULT_HOLDOUT_DAYS.get(self.preset, 1)
        return int(round(days * MS_PER_DAY))

    def to_dict(self) -> dict:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _TYPES[name]
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def read_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            key = key.replace("-", "_")
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(key, raw)
    return values


def resolve(preset: str | None = None, config_path: str | None = None,
            overrides: dict | None = None) -> RunConfig:
    """Defaults < model preset < config file < explicit overrides."""
    values: dict = {}
    file_values = read_config_file(config_path) if config_path else {}
    preset = (overrides or {}).get("preset") or file_values.get("preset") or preset or "yoochoose"
    if preset not in MODEL_PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(MODEL_PRESETS)}")
    values.update(MODEL_PRESETS[preset])
    values["preset"] = preset
    values.update(file_values)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = RunConfig(**values)
        cfg.train_config()
        if cfg.d % cfg.heads:
            raise ValueError(f"d={cfg.d} is not divisible by heads={cfg.heads}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
