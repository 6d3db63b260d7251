"""Flat ``key = value`` configuration files.

Blank lines and lines starting with ``#`` or ``;`` are ignored. Keys are the
field names of :class:`gbmem.harness.RunConfig`; values are parsed according
to the field's type. Unknown keys are an error.
"""

from __future__ import annotations

import configparser
import dataclasses

from .errors import ConfigurationError
from .harness import RunConfig

_SECTION = "run"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(name, typ, raw):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text: str, base: RunConfig | None = None, **overrides) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable config: {exc}") from None
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values = {}
    for key, raw in parser.items(_SECTION):
        if key not in fields:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = _convert(key, fields[key], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path, **overrides) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), **overrides)


def dump_config(config: RunConfig) -> str:
    return "".join(f"{f.name} = {getattr(config, f.name)}\n" for f in dataclasses.fields(config))
