"""Flat ``key = value`` text files for generator specs and training runs."""

from __future__ import annotations

from dataclasses import MISSING, fields, replace
from pathlib import Path

from .model import ModelConfig
from .trainer import SearchSpace, TrainConfig


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), str(path))


def _coerce(key: str, value: str, like):
    try:
        if isinstance(like, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            item = type(like[0])
            return tuple(item(v) for v in value.split(","))
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return value


def _defaults(cls) -> dict:
    out = {}
    for f in fields(cls):
        if f.default is not MISSING:
            out[f.name] = f.default
        elif f.default_factory is not MISSING:
            out[f.name] = f.default_factory()
    return out


def build(cls, values: dict[str, str], base=None, known: set[str] | None = None):
    """Dataclass ``cls`` from string values; unknown keys are errors naming the key."""
    base = base if base is not None else cls()
    defaults = _defaults(cls)
    allowed = set(defaults) | (known or set())
    for key in values:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")
    kw = {k: _coerce(k, v, defaults[k]) for k, v in values.items() if k in defaults}
    try:
        return replace(base, **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


_ARCH_KEYS = ("n_emb", "n_hidden", "fc_size", "dropout_rate")


def run_config(values: dict[str, str]) -> tuple[ModelConfig, TrainConfig, SearchSpace]:
    """Split a training config into model, optimiser and search settings.

    Architecture sizes appear once: a single value fixes the model, a comma
    list is a search range (the model then takes its first element).
    """
    train_keys = {f.name for f in fields(TrainConfig)}
    search_keys = {f.name for f in fields(SearchSpace)}
    model_keys = {f.name for f in fields(ModelConfig)} - {"vocab_size", "n_events"}
    flag_keys = {"time_aware", "bidirectional", "survival_output"}
    for key in values:
        if key not in train_keys | search_keys | model_keys:
            raise ConfigError(f"unknown config key {key!r}")
    search = build(SearchSpace, {k: v for k, v in values.items() if k in search_keys})
    arch = {}
    for k in _ARCH_KEYS:
        if k in values:
            arch[k] = getattr(search, k)[0]
    model = replace(ModelConfig(), **arch)
    train = build(TrainConfig, {k: v for k, v in values.items() if k in train_keys})
    # the architecture flags live on TrainConfig so ablations stay in one place
    model = replace(model, **{k: getattr(train, k) for k in flag_keys})
    return model, train, search
