"""Line-oriented "key = value" config parsing shared by manifests and the CLI.

Format: one "key = value" pair per line, '#' starts a comment, blank lines
are ignored, and optional "[section]" headers namespace subsequent keys as
"section.key".  Values are kept as strings; callers coerce with the typed
helpers below, which raise ConfigError with the offending key on failure.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_kv_text(text: str, where: str = "<config>") -> dict[str, str]:
    """Parse config text into an ordered {key: value} dict."""
    out: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"{where}:{lineno}: empty section header")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{where}:{lineno}: missing key")
        full = f"{section}.{key}" if section else key
        if full in out:
            raise ConfigError(f"{where}:{lineno}: duplicate key {full!r}")
        out[full] = value.strip()
    return out


def parse_kv_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_kv_text(path.read_text(encoding="utf-8"), where=str(path))


def format_kv(items: dict[str, str]) -> str:
    """Render keys back to config text, grouping dotted keys under sections.

    Section-less keys must precede sectioned ones (a "[section]" header
    applies to everything after it).
    """
    lines: list[str] = []
    section = ""
    for key, value in items.items():
        sec, _, name = key.rpartition(".")
        if sec != section:
            if not sec:
                raise ConfigError("section-less keys must come before sections")
            if lines:
                lines.append("")
            lines.append(f"[{sec}]")
            section = sec
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def as_int(items: dict[str, str], key: str) -> int:
    try:
        return int(items[key])
    except ValueError as e:
        raise ConfigError(f"key {key!r}: expected integer, got {items[key]!r}") from e


def as_float(items: dict[str, str], key: str) -> float:
    try:
        return float(items[key])
    except ValueError as e:
        raise ConfigError(f"key {key!r}: expected number, got {items[key]!r}") from e


def as_bool(items: dict[str, str], key: str) -> bool:
    value = items[key].lower()
    if value in ("true", "1", "yes", "on"):
        return True
    if value in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected boolean, got {items[key]!r}")


def as_float_list(items: dict[str, str], key: str) -> list[float]:
    raw = items[key].replace(",", " ").split()
    if not raw:
        raise ConfigError(f"key {key!r}: expected a list of numbers")
    try:
        return [float(v) for v in raw]
    except ValueError as e:
        raise ConfigError(f"key {key!r}: expected numbers, got {items[key]!r}") from e
