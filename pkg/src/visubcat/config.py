"""Flat ``key = value`` configuration files.

Keys are TrainConfig field names (``C = 0.05``, ``use_fine = false``) or
SynthSpec fields prefixed with ``synth.`` (``synth.modes = 3``). ``#`` starts
a comment; blank lines are ignored; a key may appear once.
"""
from dataclasses import fields

from .model import TrainConfig
from .synth import SynthSpec

SYNTH_PREFIX = "synth."
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def _convert(raw, typ, where):
    try:
        if typ is bool:
            v = raw.lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text, source="<config>"):
    """(train overrides, synth overrides) as typed dicts."""
    train_types = {f.name: f.type for f in fields(TrainConfig)}
    synth_types = {f.name: f.type for f in fields(SynthSpec)}
    train, synth, seen = {}, {}, set()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{n}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        seen.add(key)
        if key.startswith(SYNTH_PREFIX):
            name = key[len(SYNTH_PREFIX):]
            if name not in synth_types:
                raise ConfigError(f"{where}: unknown synth key {name!r}")
            synth[name] = _convert(raw, synth_types[name], where)
        elif key in train_types:
            train[key] = _convert(raw, train_types[key], where)
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    return train, synth


def load_config(path=None, **overrides):
    """(TrainConfig, SynthSpec) from an optional file plus keyword overrides.

    ``overrides`` whose value is None are skipped, so unset CLI flags keep the
    file's values. A ``seed`` override applies to both objects.
    """
    train, synth = {}, {}
    if path is not None:
        with open(path) as fh:
            train, synth = parse_config(fh.read(), path)
    for key, value in overrides.items():
        if value is None:
            continue
        train[key] = value
        if key == "seed":
            synth["seed"] = value
    if "seed" in train and "seed" not in synth:
        synth["seed"] = train["seed"]
    try:
        return TrainConfig(**train), SynthSpec(**synth)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def format_config(cfg, spec=None):
    """Inverse of ``parse_config``: one ``key = value`` line per field."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    if spec is not None:
        for f in fields(spec):
            v = getattr(spec, f.name)
            lines.append(f"{SYNTH_PREFIX}{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
