"""Experiment configuration in a line-oriented ``section.key = value`` format.

Example::

    # desk-scale denoising with ACLA after blocks 2 and 4
    experiment.task = denoise
    attention.variant = acla
    attention.insert = 2, 4
    train.epochs = 120

Blank lines and ``#`` comments are ignored.  Unset keys keep their
defaults.  ``attention.insert`` takes a comma list of 1-based block indices
or ``search``; ``search.lambda`` takes a number or ``cv``; optional values
take ``none``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..attention import OFFSET_LAYOUTS, VARIANTS
from ..errors import ConfigError
from ..restoration.model import TASKS

__all__ = [
    "ExperimentConfig",
    "LAMBDA_CANDIDATES",
    "PRESETS",
    "preset",
    "parse_config",
    "load_config",
    "dump_config",
    "save_config",
]

LAMBDA_CANDIDATES = (0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4)


@dataclass
class ExperimentSection:
    task: str = "denoise"
    seed: int = 0


@dataclass
class ModelSection:
    blocks: int = 4
    channels: int = 16
    colors: int = 3


@dataclass
class AttentionSection:
    variant: str = "none"
    k: int = 8
    insert: typing.Union[tuple, str] = ()
    max_refs: typing.Optional[int] = None
    offset_init: str = "grid"
    offset_spread: float = 1.0
    mask_bias: float = 0.0


@dataclass
class SearchSection:
    # named ``lambda`` in config files
    lam: typing.Union[float, str] = 0.35
    lambda_candidates: tuple = LAMBDA_CANDIDATES
    stage1_epochs: int = 20
    stage2_epochs: int = 20
    tau_start: float = 1.0
    tau_end: float = 0.1
    lr: float = 1e-4
    arch_lr: float = 1e-2
    batch: int = 8
    patch: int = 32
    patches_per_image: int = 1
    arch_noise: bool = True
    corrected_cost: bool = False
    save_every: int = 0


@dataclass
class TrainSection:
    epochs: int = 120
    batch: int = 8
    patch: int = 32
    lr: float = 1e-4
    key_tau: float = 1.0
    patches_per_image: int = 1
    save_every: int = 0


@dataclass
class DataSection:
    train_dir: typing.Optional[str] = None
    val_dir: typing.Optional[str] = None
    synthetic: int = 10
    size: int = 64
    val_count: int = 2
    seed: int = 100
    sigma: float = 30 / 255
    period: int = 8


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelSection = field(default_factory=ModelSection)
    attention: AttentionSection = field(default_factory=AttentionSection)
    search: SearchSection = field(default_factory=SearchSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)

    def validate(self):
        """Raise :class:`ConfigError` naming the first offending field; return ``self``."""
        e, m, a, s, t, d = self.experiment, self.model, self.attention, self.search, self.train, self.data
        if e.task not in TASKS:
            raise ConfigError("experiment.task", f"must be one of {', '.join(TASKS)}")
        for name, value in (("model.blocks", m.blocks), ("model.channels", m.channels), ("model.colors", m.colors),
                            ("attention.k", a.k), ("train.batch", t.batch), ("train.patch", t.patch),
                            ("search.batch", s.batch), ("search.patch", s.patch),
                            ("train.patches_per_image", t.patches_per_image),
                            ("search.patches_per_image", s.patches_per_image)):
            if value < 1:
                raise ConfigError(name, "must be at least 1")
        for name, value in (("train.epochs", t.epochs), ("search.stage1_epochs", s.stage1_epochs),
                            ("search.stage2_epochs", s.stage2_epochs), ("train.save_every", t.save_every),
                            ("search.save_every", s.save_every)):
            if value < 0:
                raise ConfigError(name, "must be non-negative")
        for name, value in (("train.lr", t.lr), ("search.lr", s.lr), ("search.arch_lr", s.arch_lr)):
            if value < 0:
                raise ConfigError(name, "must be non-negative")
        if a.variant not in VARIANTS + ("none",):
            raise ConfigError("attention.variant", f"must be none or one of {', '.join(VARIANTS)}")
        if a.offset_init not in OFFSET_LAYOUTS:
            raise ConfigError("attention.offset_init", f"must be one of {', '.join(OFFSET_LAYOUTS)}")
        if a.max_refs is not None and a.max_refs < 1:
            raise ConfigError("attention.max_refs", "must be at least 1 or none")
        if a.insert == "search":
            if a.variant != "acla":
                raise ConfigError("attention.insert", "only acla positions can be searched")
        elif isinstance(a.insert, tuple):
            if a.variant == "none" and a.insert:
                raise ConfigError("attention.insert", "positions given but attention.variant is none")
            if a.variant != "none" and not a.insert:
                raise ConfigError("attention.insert", "give positions or 'search'")
            if list(a.insert) != sorted(set(a.insert)):
                raise ConfigError("attention.insert", "positions must be strictly increasing")
            if a.insert and not 1 <= a.insert[0] <= a.insert[-1] <= m.blocks:
                raise ConfigError("attention.insert", f"positions must lie in 1..{m.blocks}")
        else:
            raise ConfigError("attention.insert", "expected a position list or 'search'")
        if s.lam != "cv" and (not isinstance(s.lam, float) or s.lam < 0):
            raise ConfigError("search.lambda", "must be a non-negative number or 'cv'")
        if not s.lambda_candidates or min(s.lambda_candidates) < 0:
            raise ConfigError("search.lambda_candidates", "need at least one non-negative value")
        if not 0 < s.tau_end <= s.tau_start:
            raise ConfigError("search.tau_end", "need 0 < tau_end <= tau_start")
        if t.key_tau <= 0:
            raise ConfigError("train.key_tau", "must be positive")
        if d.sigma < 0:
            raise ConfigError("data.sigma", "must be non-negative")
        if d.period < 2 or d.size < 1 or d.val_count < 0 or d.synthetic < 0:
            raise ConfigError("data", "synthetic data sizes out of range")
        return self


SECTIONS = [f.name for f in dataclasses.fields(ExperimentConfig)]
# config-file key -> dataclass attribute where they differ
RENAMED = {"lambda": "lam"}


def _file_key(attr):
    return {v: k for k, v in RENAMED.items()}.get(attr, attr)


def _parse_value(key, text, kind):
    text = text.strip()
    optional = typing.get_origin(kind) is typing.Union and type(None) in typing.get_args(kind)
    if optional:
        if text.lower() == "none":
            return None
        kind = next(k for k in typing.get_args(kind) if k is not type(None))
    try:
        if kind == typing.Union[tuple, str]:
            return text if text == "search" else _int_tuple(text)
        if kind == typing.Union[float, str]:
            return text if text == "cv" else float(text)
        if kind is tuple:
            return tuple(float(v) for v in text.split(",") if v.strip())
        if kind is bool:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r}") from None


def _int_tuple(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text, base=None):
    """Parse config text on top of ``base`` (default: library defaults) and validate it."""
    config = _copy(base) if base is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(key, "unknown setting")
        target = getattr(config, section)
        attr = RENAMED.get(name, name)
        hints = typing.get_type_hints(type(target))
        if attr not in hints:
            raise ConfigError(key, "unknown setting")
        setattr(target, attr, _parse_value(key, value, hints[attr]))
    return config.validate()


def _copy(config):
    return ExperimentConfig(**{s: dataclasses.replace(getattr(config, s)) for s in SECTIONS})


def dump_config(config):
    """Serialise every field, one ``section.key = value`` line each."""
    lines = []
    for section in SECTIONS:
        for f in dataclasses.fields(getattr(config, section)):
            lines.append(f"{section}.{_file_key(f.name)} = {_format_value(getattr(getattr(config, section), f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def save_config(config, path):
    Path(path).write_text(dump_config(config), encoding="utf-8")


def _desk(variant="acla", insert=(2, 4)):
    cfg = ExperimentConfig()
    # keys start mostly off (about 27% on under training noise) and have to earn their way on
    cfg.attention = AttentionSection(variant=variant, insert=insert if variant != "none" else (),
                                     offset_spread=8.0, mask_bias=-1.0)
    cfg.train = TrainSection(epochs=120, lr=2e-3, key_tau=0.5, patches_per_image=2)
    cfg.search = SearchSection(lam=0.35, lr=2e-3, arch_lr=1e-2, patches_per_image=2)
    return cfg


def _full_scale(task, blocks, channels, lam, insert, colors=3):
    cfg = ExperimentConfig()
    cfg.experiment.task = task
    cfg.model = ModelSection(blocks=blocks, channels=channels, colors=colors)
    cfg.attention = AttentionSection(variant="acla", k=16, insert=insert)
    cfg.search = SearchSection(lam=lam, stage1_epochs=100, stage2_epochs=100, batch=16, patch=48)
    cfg.train = TrainSection(epochs=1000, batch=16, patch=48)
    return cfg


PRESETS = {
    "desk-denoise-baseline": lambda: _desk("none"),
    "desk-denoise-cla": lambda: _desk("cla"),
    "desk-denoise-acla": lambda: _desk("acla"),
    "desk-denoise-search": lambda: _desk("acla", "search"),
    # searched settings reported for full-scale training; documentation, not targets
    "sr-edsr": lambda: _full_scale("sr2", 32, 256, 0.15, (3, 12, 26, 31, 32)),
    "sr-rcan": lambda: _full_scale("sr2", 10, 64, 0.3, (1, 3, 5, 9)),
    "denoise-edsr": lambda: _full_scale("denoise", 16, 64, 0.35, (2, 7, 9, 13, 15)),
    "demosaic-edsr": lambda: _full_scale("demosaic", 16, 64, 0.3, (2, 5, 11, 14, 16)),
    "car-edsr": lambda: _full_scale("car-precompressed", 16, 64, 0.35, (2, 7, 10, 13, 14)),
}


def preset(name):
    """A fresh, validated copy of a named preset."""
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name]().validate()
