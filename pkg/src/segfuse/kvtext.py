"""Flat ``key = value`` text documents (sidecars, configs, stats, scenarios).

Blank lines and lines starting with ``#`` are ignored. Keys are unique.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path


class KeyValueError(ValueError):
    pass


def parse(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise KeyValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key in entries:
            raise KeyValueError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def render(entries: dict[str, object]) -> str:
    return "".join(f"{key} = {_format_value(value)}\n" for key, value in entries.items())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return " ".join(_format_value(v) for v in value)
    return str(value)


def read(path) -> dict[str, str]:
    return parse(Path(path).read_text(encoding="utf-8"))


def write(entries: dict[str, object], path) -> None:
    atomic_write_bytes(path, render(entries).encode("utf-8"))


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise KeyValueError(f"not a boolean: {text!r}")


def parse_floats(text: str, count: int | None = None) -> tuple[float, ...]:
    values = tuple(float(v) for v in text.replace(",", " ").split())
    if count is not None and len(values) != count:
        raise KeyValueError(f"expected {count} numbers, got {text!r}")
    return values


def parse_ints(text: str, count: int | None = None) -> tuple[int, ...]:
    values = tuple(int(v) for v in text.replace(",", " ").split())
    if count is not None and len(values) != count:
        raise KeyValueError(f"expected {count} integers, got {text!r}")
    return values


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
