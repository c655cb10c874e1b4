"""
Reading and writing system configurations.

Configurations are TOML documents with two tables::

    [cavity]
    kappa = 3.0
    omega_fb = 3.5
    eta = 1.0          # optional
    detuning = 0.0     # optional

    [modes]
    omega = [1.0, 0.9]
    gamma = [4e-05, 3e-05]
    nbar = [100.0, 100.0]
    coupling_G = [0.16, 0.1]
    gain_gcd = [0.8, 0.8]

Per-mode entries may be given as a scalar, which is broadcast to all modes.
Result files written by the command line tool embed the resolved
configuration in ``#|``-prefixed header lines and can be loaded directly.
"""

from __future__ import annotations

import hashlib
import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ParseError, UnknownKey, ValidationError
from .model import SystemConfig

__all__ = [
    "load_config",
    "loads_config",
    "emit_config",
    "config_hash",
    "apply_overrides",
    "EMBED_PREFIX",
]

EMBED_PREFIX = "#| "

CAVITY_KEYS = ("kappa", "omega_fb", "eta", "detuning")
REQUIRED_CAVITY = ("kappa", "omega_fb")
MODE_KEYS = ("omega", "gamma", "nbar", "coupling_G", "gain_gcd")

_LINECOL = re.compile(r"\(at line (\d+), column (\d+)\)")


def _parse_toml(text, what="configuration"):
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        m = _LINECOL.search(msg)
        line = int(m.group(1)) if m else getattr(exc, "lineno", None)
        col = int(m.group(2)) if m else getattr(exc, "colno", None)
        raise ParseError(f"invalid {what}: {_LINECOL.sub('', msg).strip()}", line, col) from None


def _extract_embedded(text):
    if not text.lstrip().startswith("#"):
        return text
    lines = [ln[len(EMBED_PREFIX):] if ln.startswith(EMBED_PREFIX) else ln[len(EMBED_PREFIX) - 1:]
             for ln in text.splitlines() if ln.startswith(EMBED_PREFIX.rstrip())]
    if not lines:
        return text
    return "\n".join(lines) + "\n"


def _set_path(doc, key, value):
    m = re.fullmatch(r"([A-Za-z_]+)\.([A-Za-z_]+)(?:\[(\d+)\])?", key.strip())
    if not m:
        raise UnknownKey(key, "override keys look like 'section.key' or 'section.key[index]'")
    section, name, index = m.group(1), m.group(2), m.group(3)
    table = doc.setdefault(section, {})
    if not isinstance(table, dict):
        raise UnknownKey(key, f"'{section}' is not a table")
    if index is None:
        table[name] = value
        return
    if name not in table:
        raise UnknownKey(key, "cannot index a key that is not set")
    current = table[name]
    if not isinstance(current, list):
        current = [current]
    i = int(index)
    if i >= len(current):
        raise ValidationError(key, f"index {i} out of range for {len(current)} entries")
    current = list(current)
    current[i] = value
    table[name] = current


def apply_overrides(doc, overrides):
    """Apply ``KEY=VALUE`` strings (TOML values) to a parsed document in place."""
    for item in overrides or ():
        if "=" not in item:
            raise ParseError(f"override {item!r} is not of the form KEY=VALUE")
        key, raw = item.split("=", 1)
        value = _parse_toml(f"v = {raw.strip()}", what=f"override value for {key.strip()}")["v"]
        _set_path(doc, key, value)
    return doc


def _build(doc):
    unknown = set(doc) - {"cavity", "modes"}
    if unknown:
        raise UnknownKey(sorted(unknown)[0], "unknown section")
    cavity = doc.get("cavity")
    modes = doc.get("modes")
    if not isinstance(cavity, dict):
        raise ValidationError("cavity", "missing [cavity] table")
    if not isinstance(modes, dict):
        raise ValidationError("modes", "missing [modes] table")
    for key in cavity:
        if key not in CAVITY_KEYS:
            raise UnknownKey(f"cavity.{key}", "unknown key")
    for key in modes:
        if key not in MODE_KEYS:
            raise UnknownKey(f"modes.{key}", "unknown key")
    for key in REQUIRED_CAVITY:
        if key not in cavity:
            raise ValidationError(f"cavity.{key}", "is required")
    for key in MODE_KEYS:
        if key not in modes:
            raise ValidationError(f"modes.{key}", "is required")

    def number(name, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(name, f"expected a number, got {v!r}")
        return float(v)

    per_mode = {}
    for key in MODE_KEYS:
        raw = modes[key]
        values = raw if isinstance(raw, list) else [raw]
        per_mode[key] = [number(f"modes.{key}", v) for v in values]
    n = len(per_mode["omega"])
    if n < 1:
        raise ValidationError("modes.omega", "needs at least one frequency")
    for key in MODE_KEYS[1:]:
        if not isinstance(modes[key], list):
            per_mode[key] = per_mode[key] * n
        elif len(per_mode[key]) != n:
            raise ValidationError(
                f"modes.{key}", f"has {len(per_mode[key])} entries but modes.omega has {n}")
    cav = {k: number(f"cavity.{k}", v) for k, v in cavity.items()}
    return SystemConfig.from_arrays(**per_mode, **cav)


def loads_config(text, overrides=()) -> SystemConfig:
    """Parse configuration text (or a result file header) into a SystemConfig."""
    doc = _parse_toml(_extract_embedded(text))
    apply_overrides(doc, overrides)
    return _build(doc)


def load_config(path, overrides=()) -> SystemConfig:
    """Read, override and validate a configuration file.

    Raises
    ------
    ParseError
        Malformed TOML (with line and column) or malformed override.
    ValidationError
        Missing or inconsistent fields, or a violated parameter invariant.
    UnknownKey
        Keys outside the schema.
    """
    text = Path(path).read_text(encoding="utf-8")
    return loads_config(text, overrides)


def _fmt(x):
    return repr(float(x))


def emit_config(config: SystemConfig) -> str:
    """Canonical TOML text; ``loads_config(emit_config(c)) == c``."""
    cav = config.cavity
    lines = ["[cavity]"]
    for key in CAVITY_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cav, key))}")
    lines.append("")
    lines.append("[modes]")
    for key in MODE_KEYS:
        values = ", ".join(_fmt(getattr(m, key)) for m in config.modes)
        lines.append(f"{key} = [{values}]")
    return "\n".join(lines) + "\n"


def config_hash(config: SystemConfig) -> str:
    return hashlib.sha256(emit_config(config).encode("utf-8")).hexdigest()
