"""INI run configuration.

Example::

    [paths]
    clickstream = data/clickstream.csv
    course = data/course.txt
    outcomes = data/outcomes.csv
    embeddings = data/embeddings.txt
    out = results

    [features]
    gamma = 1.0
    layout = time, views, annotations, engagement

    [models]
    use = bnn, esn, tbn, gbc

    [train]
    epochs = 300

    [eval]
    K = 5
    seed = 42

Relative paths resolve against the directory holding the config file.
Unknown sections or keys are rejected so typos do not silently fall back
to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .evaluate import ALL_MODELS, ExperimentConfig
from .features import DEFAULT_LAYOUT, FEATURE_KINDS, EngagementParams
from .gbc import GBCConfig
from .models import TrainConfig
from .synth import SynthConfig

PATH_KEYS = ("clickstream", "course", "outcomes", "embeddings", "stopwords", "out")


@dataclass
class RunConfig:
    paths: dict[str, Path | None] = field(default_factory=lambda: dict.fromkeys(PATH_KEYS))
    engagement: EngagementParams = EngagementParams()
    layout: tuple[str, ...] = DEFAULT_LAYOUT
    models: tuple[str, ...] = ALL_MODELS
    train: TrainConfig = TrainConfig()
    gbc: GBCConfig = GBCConfig()
    K: int = 5
    seed: int = 42
    resample: bool = False
    pooled: bool = False
    strict: bool = False
    synth: SynthConfig = SynthConfig()
    clickstream_format: str | None = None

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            models=self.models,
            K=self.K,
            seed=self.seed,
            resample=self.resample,
            train=self.train,
            gbc=self.gbc,
            layout=self.layout,
            engagement=self.engagement,
            pooled=self.pooled,
        )

    def path(self, key: str) -> Path:
        p = self.paths.get(key)
        if p is None:
            raise ConfigError(f"no path configured for '{key}' (set it in [paths])")
        return p


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.replace("\n", ",").split(",") if v.strip())


def _coerce(raw: str, like, key: str):
    """Parse ``raw`` into the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            items = _split_list(raw)
            if like and isinstance(like[0], int):
                return tuple(int(v) for v in items)
            return items
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from exc
    return raw


def _optional(raw: str, key: str, cast):
    low = raw.strip().lower()
    if low in ("", "none", "default"):
        return None
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {raw!r}") from exc


def _class_weights(raw: str):
    low = raw.strip().lower()
    if low in ("", "none"):
        return None
    if low == "balanced":
        return "balanced"
    parts = _split_list(raw)
    if len(parts) != 2:
        raise ConfigError(f"class_weights must be none, balanced or two numbers, got {raw!r}")
    return tuple(float(p) for p in parts)


def _update_dataclass(obj, section: configparser.SectionProxy, name: str, special=None):
    special = special or {}
    known = {f.name: f for f in fields(obj)}
    lowered = {k.lower(): k for k in known}
    changes = {}
    for key, raw in section.items():
        attr = lowered.get(key.lower())
        if attr is None:
            raise ConfigError(f"unknown key '{key}' in [{name}]")
        if attr in special:
            changes[attr] = special[attr](raw)
        else:
            changes[attr] = _coerce(raw, getattr(obj, attr), f"{name}.{key}")
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] settings: {exc}") from exc


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read a config file; ``None`` gives the built-in defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    base = path.parent

    allowed = {"paths", "features", "models", "train", "gbc", "eval", "synth"}
    for name in parser.sections():
        if name not in allowed:
            raise ConfigError(f"unknown section [{name}] in {path}")

    if parser.has_section("paths"):
        for key, raw in parser["paths"].items():
            if key not in PATH_KEYS and key != "format":
                raise ConfigError(f"unknown key '{key}' in [paths]")
            if key == "format":
                cfg.clickstream_format = raw.strip() or None
            else:
                p = Path(raw.strip()).expanduser()
                cfg.paths[key] = p if p.is_absolute() else base / p

    if parser.has_section("features"):
        sec = dict(parser["features"])
        layout = sec.pop("layout", None)
        if layout is not None:
            cfg.layout = _split_list(layout)
            bad = [k for k in cfg.layout if k not in FEATURE_KINDS]
            if bad or not cfg.layout:
                raise ConfigError(f"unknown feature kinds {bad}; choose from {FEATURE_KINDS}")
        proxy = configparser.ConfigParser(interpolation=None)
        proxy.optionxform = str
        proxy["features"] = sec
        cfg.engagement = _update_dataclass(cfg.engagement, proxy["features"], "features")

    if parser.has_section("models"):
        for key in parser["models"]:
            if key != "use":
                raise ConfigError(f"unknown key '{key}' in [models]")
        cfg.models = _split_list(parser["models"].get("use", ",".join(ALL_MODELS)))
        bad = [m for m in cfg.models if m not in ALL_MODELS]
        if bad or not cfg.models:
            raise ConfigError(f"unknown models {bad}; choose from {ALL_MODELS}")

    if parser.has_section("train"):
        cfg.train = _update_dataclass(
            cfg.train,
            parser["train"],
            "train",
            special={
                "dropout_rate": lambda r: _optional(r, "train.dropout_rate", float),
                "early_stop_patience": lambda r: _optional(r, "train.early_stop_patience", int),
                "esn_threshold": lambda r: _optional(r, "train.esn_threshold", float),
                "class_weights": _class_weights,
                "seed": lambda r: _coerce(r, 0, "train.seed"),
            },
        )

    if parser.has_section("gbc"):
        cfg.gbc = _update_dataclass(cfg.gbc, parser["gbc"], "gbc")

    if parser.has_section("eval"):
        for key, raw in parser["eval"].items():
            k = key.lower()
            if k == "k":
                cfg.K = _coerce(raw, 0, "eval.K")
            elif k in ("seed",):
                cfg.seed = _coerce(raw, 0, "eval.seed")
            elif k in ("resample", "pooled", "strict"):
                setattr(cfg, k, _coerce(raw, True, f"eval.{k}"))
            elif k == "class_weights":
                cfg.train = replace(cfg.train, class_weights=_class_weights(raw))
            else:
                raise ConfigError(f"unknown key '{key}' in [eval]")
        if cfg.K < 2:
            raise ConfigError("eval.K must be at least 2")

    if parser.has_section("synth"):
        cfg.synth = _update_dataclass(cfg.synth, parser["synth"], "synth")
    return cfg


def with_overrides(cfg: RunConfig, seed: int | None = None, out: str | Path | None = None) -> RunConfig:
    """Apply command-line ``--seed``/``--out`` on top of a loaded config."""
    if seed is not None:
        cfg = replace(cfg, seed=seed, synth=replace(cfg.synth, seed=seed))
    if out is not None:
        paths = dict(cfg.paths)
        paths["out"] = Path(out)
        cfg = replace(cfg, paths=paths)
    return cfg
