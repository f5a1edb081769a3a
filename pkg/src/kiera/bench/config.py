"""Flat key = value run configuration.

Grammar, one entry per line::

    # comment                       (blank lines and '#' comments ignored)
    key = value                     (key is a LearnerConfig field name)

Values are parsed according to the field type: integers, floats (``5e-5``
is fine) or, for ``extractor_dims``, comma-separated integers. Unknown keys
are an error so typos do not silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import asdict, fields
from pathlib import Path

from ..learner import LearnerConfig


class ConfigError(ValueError):
    pass


def parse_config(text: str, **overrides) -> LearnerConfig:
    types = {f.name: f.type for f in fields(LearnerConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key == "extractor_dims":
                values[key] = tuple(int(v) for v in value.split(","))
            elif types[key] in ("int", int):
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return LearnerConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> LearnerConfig:
    return parse_config(Path(path).read_text(), **overrides)


def dump_config(cfg: LearnerConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if key == "extractor_dims":
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"
