"""Run configuration: defaults <- TOML file <- AEDD_* environment <- flags.

Config files are TOML with one table per section::

    [model]
    D = 64
    [train]
    epochs = 30

Environment overrides use ``AEDD_<SECTION>_<FIELD>``, e.g.
``AEDD_TRAIN_L_ENROLL_MIN=12``; field names match case-insensitively.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field

from .decode import DecodeConfig
from .errors import InputError
from .model import ModelConfig
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_PREFIX = "AEDD_"


@dataclass
class SimConfig:
    n_speakers: int = 2
    num: int = 100
    frames: int = 500
    mean_utt_frames: float = 30.0
    mean_gap_frames: float | None = None
    overlap_bias: float = 0.0
    noise_spread: float = 0.5
    within_spread: float = 1.0
    feature_dim: int = 345

    def validate(self):
        if self.n_speakers < 1 or self.num < 1 or self.frames < 1:
            raise InputError("speakers, num and frames must be >= 1")


@dataclass
class ScoreConfig:
    collar: float = 0.25
    score_overlap: bool = True
    fa_denominator: str = "ref"

    def validate(self):
        if self.collar < 0:
            raise InputError("collar must be non-negative")
        if self.fa_denominator not in ("ref", "complement"):
            raise InputError("fa_denominator must be 'ref' or 'complement'")


@dataclass
class RunSection:
    seed: int = 0
    precision: int = 64
    workers: int = 1

    def validate(self):
        if self.precision not in (32, 64):
            raise InputError("precision must be 32 or 64")
        if self.workers < 1:
            raise InputError("workers must be >= 1")


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    sim: SimConfig = field(default_factory=SimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    def sections(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def validate(self):
        for sec in self.sections().values():
            sec.validate()

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(sec) for name, sec in self.sections().items()}


def _coerce(value, current, ftype: str, where: str):
    """Convert ``value`` (possibly a string from env/CLI) to the field's type."""
    optional = "None" in ftype
    if isinstance(value, str):
        v = value.strip()
        if optional and v.lower() in ("", "none", "null"):
            return None
        if "bool" in ftype:
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise InputError(f"{where}: expected a boolean, got {value!r}")
        try:
            if "int" in ftype:
                return int(v)
            if "float" in ftype:
                return float(v)
        except ValueError:
            raise InputError(f"{where}: cannot parse {value!r} as {ftype}") from None
        return v
    if value is None and not optional:
        raise InputError(f"{where}: value required")
    if "float" in ftype and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _field_map(section) -> dict:
    return {f.name.lower(): f for f in dataclasses.fields(section)}


def set_value(cfg: RunConfig, section: str, key: str, value, where: str = "config") -> None:
    sections = cfg.sections()
    if section not in sections:
        raise InputError(f"{where}: unknown config section {section!r}")
    sec = sections[section]
    fmap = _field_map(sec)
    f = fmap.get(key.lower())
    if f is None:
        raise InputError(f"{where}: unknown key {section}.{key}")
    ftype = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    setattr(sec, f.name, _coerce(value, getattr(sec, f.name), ftype, f"{where} {section}.{f.name}"))


def apply_mapping(cfg: RunConfig, data: dict, where: str) -> None:
    for section, values in data.items():
        if not isinstance(values, dict):
            raise InputError(f"{where}: top-level key {section!r} must be a table")
        for key, value in values.items():
            set_value(cfg, section, key, value, where)


def load_file(cfg: RunConfig, path) -> None:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    apply_mapping(cfg, data, str(path))


def apply_env(cfg: RunConfig, environ=None) -> None:
    environ = os.environ if environ is None else environ
    sections = cfg.sections()
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in sections or not key:
            continue  # other AEDD_* variables, e.g. AEDD_PURE_PYTHON
        set_value(cfg, section, key, value, f"env {name}")


def build(config_path=None, overrides=None, environ=None) -> RunConfig:
    """Merge all layers; ``overrides`` maps "section.key" to values."""
    cfg = RunConfig()
    if config_path:
        load_file(cfg, config_path)
    apply_env(cfg, environ)
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        set_value(cfg, section, key, value, "flag")
    cfg.validate()
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dumps(cfg: RunConfig) -> str:
    """TOML text that reproduces ``cfg`` when fed back through :func:`build`.

    None-valued fields are written as the string "none".
    """
    lines = []
    for name, values in cfg.to_dict().items():
        lines.append(f"[{name}]")
        for key, v in values.items():
            lines.append(f"{key} = {_toml_value('none' if v is None else v)}")
        lines.append("")
    return "\n".join(lines)
