"""Experiment configuration files.

Flat ``key = value`` lines grouped under ``[data]``, ``[teachers]``,
``[train]``, ``[kd]`` and ``[paths]``; the top-level ``seed`` key precedes
any section. ``#`` and ``;`` start comment lines. Unknown sections and keys
are rejected with their line number. ``to_text`` writes the fully resolved
configuration in the same syntax, so echoed copies load back unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .data import NOISE_MODES, SyntheticSpec
from .distill import KDConfig
from .errors import ConfigError, MTKDError
from .state import StateMask
from .trainer import TeacherConfig, TrainConfig

DATA_SOURCES = ("synthetic", "idx", "csv")


@dataclass
class DataConfig:
    source: str = "synthetic"
    classes: int = 4
    dim: int = 16
    clusters_per_class: int = 3
    spread: float = 1.0
    center_scale: float = 1.0
    samples_per_class: int = 250
    test_fraction: float = 0.8
    shard_samples_per_class: int = 400
    noise_rates: tuple = (0.0, 0.1, 0.2, 0.4)
    noise_mode: str = "cluster"
    region_bias: float = 0.0
    idx_images: str = ""
    idx_labels: str = ""
    csv_path: str = ""
    label_column: str = "label"

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        names = {f.name for f in fields(SyntheticSpec)} - {"seed"}
        return SyntheticSpec(seed=seed, **{n: getattr(self, n) for n in names})


@dataclass
class PathsConfig:
    # relative paths resolve against --out
    checkpoint: str = "teachers.mtkd"


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    teachers: TeacherConfig = field(default_factory=TeacherConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, teachers=replace(self.teachers, seed=seed),
                       train=replace(self.train, seed=seed))


# teacher seed follows the top-level key; [train] seed defaults to it
_HIDDEN_KEYS = {"teachers": {"seed"}, "train": {"kd", "teacher_count"}}
_SECTIONS = ("data", "teachers", "train", "kd", "paths")


def _section_fields(name):
    cls = {"data": DataConfig, "teachers": TeacherConfig, "train": TrainConfig,
           "kd": KDConfig, "paths": PathsConfig}[name]
    skip = _HIDDEN_KEYS.get(name, set())
    return {f.name: f for f in fields(cls) if f.name not in skip}


def _parse_bool(text):
    t = text.lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_hidden(text):
    """``64x64, 48x48`` -> [[64, 64], [48, 48]]."""
    out = []
    for arch in text.split(","):
        arch = arch.strip()
        if not arch:
            continue
        out.append([int(w) for w in arch.lower().split("x")])
    if not out:
        raise ValueError("need at least one teacher architecture")
    return out


def _convert(section, key, text, default):
    if section == "teachers" and key == "hidden":
        return _parse_hidden(text)
    if section == "train" and key == "state_mask":
        return StateMask.parse(text)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(v) for v in text.split(",") if v.strip())
    return text


def _format(section, key, value):
    if section == "teachers" and key == "hidden":
        return ", ".join("x".join(str(w) for w in arch) for arch in value)
    if isinstance(value, StateMask):
        return value.name()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def parse_config_text(text: str, base: ExperimentConfig = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    values = {s: {} for s in _SECTIONS}
    top = {}
    section = None
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", line=lineno)
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", key=section, line=lineno)
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.lower().replace("-", "_")
        qualified = f"{section}.{key}" if section else key
        if qualified in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[qualified]})", key=qualified, line=lineno)
        seen[qualified] = lineno
        if section is None:
            if key != "seed":
                raise ConfigError("unknown top-level key", key=key, line=lineno)
            try:
                top["seed"] = int(value)
            except ValueError:
                raise ConfigError(f"bad value {value!r}", key=key, line=lineno) from None
            continue
        known = _section_fields(section)
        if key not in known:
            raise ConfigError(f"unknown key in [{section}]", key=qualified, line=lineno)
        current = getattr(base.train.kd if section == "kd" else getattr(base, section), key)
        try:
            values[section][key] = (_convert(section, key, value, current), lineno)
        except (ValueError, MTKDError) as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", key=qualified, line=lineno) from None

    def build(section, obj):
        kwargs = {k: v for k, (v, _) in values[section].items()}
        try:
            return replace(obj, **kwargs)
        except (ValueError, TypeError, MTKDError) as exc:
            first = min((ln for _, ln in values[section].values()), default=None)
            raise ConfigError(f"invalid [{section}] settings: {exc}", line=first) from None

    seed = top.get("seed", base.seed)
    kd = build("kd", base.train.kd)
    train = build("train", replace(base.train, kd=kd))
    cfg = ExperimentConfig(
        seed=seed,
        data=build("data", base.data),
        teachers=build("teachers", base.teachers),
        train=train,
        paths=build("paths", base.paths),
    )
    validate(cfg)
    run_seed = values["train"]["seed"][0] if "seed" in values["train"] else seed
    return replace(cfg.with_seed(seed), train=replace(cfg.train, seed=run_seed))


def validate(cfg: ExperimentConfig):
    d = cfg.data
    if d.source not in DATA_SOURCES:
        raise ConfigError(f"source must be one of {DATA_SOURCES}", key="data.source")
    if d.source == "synthetic":
        if d.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}", key="data.noise_mode")
        if len(d.noise_rates) != len(cfg.teachers.hidden):
            raise ConfigError(
                f"{len(d.noise_rates)} noise rates for {len(cfg.teachers.hidden)} teacher architectures",
                key="data.noise_rates",
            )
        try:
            d.synthetic_spec(cfg.seed)
        except MTKDError as exc:
            raise ConfigError(str(exc), key="data") from None
    elif d.source == "idx" and not (d.idx_images and d.idx_labels):
        raise ConfigError("idx source needs idx_images and idx_labels", key="data.idx_images")
    elif d.source == "csv" and not d.csv_path:
        raise ConfigError("csv source needs csv_path", key="data.csv_path")


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text)


def to_text(cfg: ExperimentConfig) -> str:
    lines = [f"seed = {cfg.seed}", ""]
    objs = {"data": cfg.data, "teachers": cfg.teachers, "train": cfg.train, "kd": cfg.train.kd, "paths": cfg.paths}
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        for name in _section_fields(section):
            lines.append(f"{name} = {_format(section, name, getattr(objs[section], name))}")
        lines.append("")
    return "\n".join(lines)

