"""
Run configuration for the mdpulse command line.

Config files are flat `section.key=value` lines read with python-dotenv
(`dotenv_values`, no interpolation); the process environment is never
consulted. Ranges and tuples are comma separated (`dataset.hr_bpm=50,120`),
booleans are true/false. `--set key=value` overrides file values.

Sections: run, dataset, preprocess, model, training, eval, split, ablate.
"""

import logging
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union, get_args, get_origin

from dotenv import dotenv_values

from mdpulse.errors import InvalidConfig, IoError
from mdpulse.metrics.evaluate import EvalConfig
from mdpulse.models.config import ModelConfig
from mdpulse.optics.render import SamplerRanges
from mdpulse.training.trainer import TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetConfig:
    n_clips: int = 8
    height: int = 36
    width: int = 36
    fs: float = 30.0
    duration_s: float = 6.0
    seed: Optional[int] = None
    ranges: SamplerRanges = field(default_factory=SamplerRanges)


@dataclass(frozen=True)
class PreprocessConfig:
    """Model input size; clips are center-cropped and block-averaged to it."""

    input_hw: int = 36


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    seed: Optional[int] = None


@dataclass(frozen=True)
class AblateConfig:
    archs: Tuple[str, ...] = ("attention", "plain")
    include_sd_input_only: bool = False
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/desk"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def dataset_seed(self) -> int:
        return self.dataset.seed if self.dataset.seed is not None else self.seed

    @property
    def split_seed(self) -> int:
        return self.split.seed if self.split.seed is not None else self.seed + 2

    def validate(self) -> None:
        self.model.validate()
        self.training.validate()
        self.dataset.ranges.validate()
        if self.dataset.n_clips < 1:
            raise InvalidConfig(f"dataset.n_clips must be at least 1, got {self.dataset.n_clips}")
        if self.preprocess.input_hw > min(self.dataset.height, self.dataset.width):
            raise InvalidConfig("preprocess.input_hw cannot exceed the rendered frame size")
        if not 0 <= self.split.test_fraction < 1:
            raise InvalidConfig(f"split.test_fraction must lie in [0, 1), got {self.split.test_fraction}")
        if self.ablate.workers < 1:
            raise InvalidConfig(f"ablate.workers must be at least 1, got {self.ablate.workers}")


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise InvalidConfig(f"{key}: expected true/false, got {text!r}")


def _coerce(text: str, kind, key: str):
    """Parse `text` into the annotated field type `kind`."""
    origin, args = get_origin(kind), get_args(kind)
    if origin is Union and type(None) in args:
        if text.strip().lower() in ("", "none"):
            return None
        kind = next(a for a in args if a is not type(None))
        origin, args = get_origin(kind), get_args(kind)
    try:
        if origin is tuple:
            items = [s.strip() for s in text.split(",") if s.strip()]
            element = args[0] if args else str
            return tuple(_coerce(s, element, key) for s in items)
        if kind is bool:
            return _parse_bool(text, key)
        if kind in (int, float):
            return kind(text)
        return text.strip()
    except ValueError as exc:
        raise InvalidConfig(f"{key}: cannot parse {text!r}") from exc


def _apply(instance, values: Mapping[str, str], section: str):
    known = {f.name: f for f in fields(instance)}
    range_names = {f.name for f in fields(SamplerRanges)}
    changes = {}
    ranges: Dict[str, str] = {}
    for key, text in values.items():
        if key in known and not is_dataclass(getattr(instance, key)):
            changes[key] = _coerce(text, known[key].type, f"{section}.{key}")
        elif section == "dataset" and key in range_names:
            ranges[key] = text
        else:
            raise InvalidConfig(f"unknown config key {section}.{key}")
    if ranges:
        changes["ranges"] = _apply(instance.ranges, ranges, section)
    return replace(instance, **changes) if changes else instance


def parse_overrides(pairs) -> Dict[str, str]:
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise InvalidConfig(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_run_config(
    path=None,
    overrides: Optional[Mapping[str, str]] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional config file and overrides.

    Args:
        path: Config file (`section.key=value` lines)
        overrides: Extra `section.key` -> value strings, applied last
        seed: Master seed (`run.seed`); sections without an explicit seed derive theirs
        out_dir: Output directory (`run.out_dir`)
    """
    values: Dict[str, str] = {}
    if path is not None:
        if not Path(path).exists():
            raise IoError(path)
        values.update({k: v for k, v in dotenv_values(path, interpolate=False).items() if v is not None})
    values.update(overrides or {})
    if seed is not None:
        values["run.seed"] = str(seed)
    if out_dir is not None:
        values["run.out_dir"] = str(out_dir)

    sections: Dict[str, Dict[str, str]] = {}
    for key, text in values.items():
        if "." not in key:
            raise InvalidConfig(f"config key {key!r} needs a section prefix")
        section, name = key.split(".", 1)
        sections.setdefault(section, {})[name] = text

    cfg = RunConfig()
    changes = {}
    for section, entries in sections.items():
        if section == "run":
            run = _apply(cfg, entries, "run")
            changes["seed"] = run.seed
            changes["out_dir"] = run.out_dir
        elif section in ("dataset", "preprocess", "model", "training", "eval", "split", "ablate"):
            changes[section] = _apply(getattr(cfg, section), entries, section)
        else:
            raise InvalidConfig(f"unknown config section {section!r}")
    cfg = replace(cfg, **changes)
    if "seed" not in sections.get("training", {}):
        cfg = replace(cfg, training=replace(cfg.training, seed=cfg.seed + 1))
    cfg.validate()
    logger.debug("Loaded run config: %s", cfg)
    return cfg
