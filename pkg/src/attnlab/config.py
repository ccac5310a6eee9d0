"""Flat key=value configuration files and CLI override handling.

One assignment per line, ``#`` comments, values parsed as int, float,
bool, or string in that order. Keys mirror the experiment and task
config dataclass fields.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path


def _parse_value(text: str):
    text = text.strip()
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text.strip("\"'")


def parse_config_file(path: str | Path) -> dict:
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = _parse_value(val)
    return values


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ValueError(f"override must look like key=value, got {text!r}")
    key, _, val = text.partition("=")
    return key.strip(), _parse_value(val)


def build_dataclass(cls, values: dict, used: set[str] | None = None):
    """Instantiate ``cls`` from the subset of ``values`` matching its fields."""
    names = {f.name for f in fields(cls)}
    kwargs = {k: v for k, v in values.items() if k in names}
    if used is not None:
        used.update(kwargs)
    return cls(**kwargs)
