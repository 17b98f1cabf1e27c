"""Run configuration: defaults, then an INI file, then the environment, then flags.

The INI file has one section per dataclass::

    [run]    seed, threads
    [model]  ModelConfig fields
    [train]  TrainConfig fields
    [eval]   EvalOptions fields
    [data]   DataOptions fields

Keys match field names; command-line flags use the same names with dashes.
"""

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .evaluation import EvalOptions
from .model import ModelConfig
from .training import TrainConfig

THREADS_ENV = "ROTAMER_FORGE_THREADS"


@dataclass(frozen=True)
class DataOptions:
    resolution_max: float = 1.8
    rvalue_max: float = 0.25
    val_fraction: float = 0.05
    exclude_file: str = ""


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "eval": EvalOptions, "data": DataOptions}
# seeds come from [run]; the context size always follows the model
SEED_OWNED = {"train": ("seed",), "eval": ("seed", "k")}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    data: DataOptions = field(default_factory=DataOptions)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        parts = {name: SECTIONS[name](**d.pop(name, {})) for name in SECTIONS}
        return cls(**d, **parts)


def _coerce(value, kind, key):
    if isinstance(value, str):
        text = value.strip()
        try:
            if kind is bool:
                if text.lower() in ("1", "true", "yes", "on"):
                    return True
                if text.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
            return kind(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None
    return kind(value) if kind is not bool else bool(value)


def _field_types(cls):
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: hints.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
            for f in fields(cls)}


def read_ini(path):
    """Sections of an INI file as nested dicts of raw strings."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for name in parser.sections():
        if name != "run" and name not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{name}]")
        out[name] = dict(parser[name])
    return out


def _apply(base, overrides, section):
    if not overrides:
        return base
    types = _field_types(type(base))
    unknown = set(overrides) - set(types)
    if unknown:
        raise ConfigError(f"unknown [{section}] keys: {sorted(unknown)}")
    return replace(base, **{k: _coerce(v, types[k], f"{section}.{k}") for k, v in overrides.items()})


def resolve(config_file=None, flags=None, environ=None):
    """Build a RunConfig; ``flags`` maps section -> {key: value} (plus "run")."""
    environ = os.environ if environ is None else environ
    flags = flags or {}
    layers = [read_ini(config_file)] if config_file else []
    env_layer = {}
    if environ.get(THREADS_ENV):
        env_layer["run"] = {"threads": environ[THREADS_ENV]}
    layers += [env_layer, flags]

    cfg = RunConfig()
    for layer in layers:
        run = layer.get("run", {})
        if set(run) - {"seed", "threads"}:
            raise ConfigError(f"unknown [run] keys: {sorted(set(run) - {'seed', 'threads'})}")
        if "seed" in run:
            cfg = replace(cfg, seed=_coerce(run["seed"], int, "run.seed"))
        if "threads" in run:
            cfg = replace(cfg, threads=_coerce(run["threads"], int, "run.threads"))
        for name in SECTIONS:
            section = layer.get(name, {})
            owned = set(section) & set(SEED_OWNED.get(name, ()))
            if owned:
                raise ConfigError(f"[{name}] {sorted(owned)} are set from [run] or the model")
            cfg = replace(cfg, **{name: _apply(getattr(cfg, name), section, name)})
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    cfg = replace(
        cfg,
        train=replace(cfg.train, seed=cfg.seed),
        eval=replace(cfg.eval, seed=cfg.seed, k=cfg.model.k),
    )
    cfg.model.validate()
    cfg.train.validate()
    cfg.eval.validate()
    return cfg
