"""Versioned, line-oriented key-value files with ``[section]`` headers.

Used for the tokenizer schema and the baseline parameter files. Floats are
written with 17 significant digits, which round-trips IEEE doubles exactly.

Layout::

    tokenizer-schema v1
    [depth]
    strategy = EqualFrequency
    edges = -0.0012,0.0003,...
"""

import math
from pathlib import Path

from .errors import CorruptFile, FormatVersionError


def format_float(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def format_value(value):
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    # any iterable of numbers
    return ",".join(format_float(v) for v in value)


def dump(path, header, sections):
    """Write ``sections`` (iterable of ``(name, mapping)``) under ``header``."""
    lines = [header]
    for name, items in sections:
        lines.append(f"[{name}]")
        for key, value in items.items():
            lines.append(f"{key} = {format_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load(path, header):
    """Read a file written by :func:`dump`.

    Returns a dict ``{section: {key: raw string}}`` preserving order.
    Raises FormatVersionError when the first line differs from ``header``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise CorruptFile(f"{path}: empty file")
    if lines[0].strip() != header:
        raise FormatVersionError(f"{path}: expected header {header!r}, got {lines[0].strip()!r}")
    sections = {}
    current = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        if current is None or "=" not in line:
            raise CorruptFile(f"{path}:{lineno}: unexpected line {raw!r}")
        key, _, value = line.partition("=")
        current[key.strip()] = value.strip()
    return sections


def parse_floats(raw):
    if raw == "":
        return []
    try:
        return [float(x) for x in raw.split(",")]
    except ValueError as exc:
        raise CorruptFile(f"bad number list {raw!r}") from exc


def parse_float(raw):
    try:
        return float(raw)
    except ValueError as exc:
        raise CorruptFile(f"bad number {raw!r}") from exc


def parse_int(raw):
    try:
        return int(raw)
    except ValueError as exc:
        raise CorruptFile(f"bad integer {raw!r}") from exc


def require(section, key, where=""):
    try:
        return section[key]
    except KeyError:
        raise CorruptFile(f"missing key {key!r} {where}".strip()) from None
