"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Recognised keys and defaults are
listed in :data:`DEFAULTS`; ``freeze_shared`` only affects the heuristic
search.  Values given on the command line take precedence over the file,
which takes precedence over the defaults.
"""
from __future__ import annotations

from pathlib import Path

from .energy import PUE
from .metrics import DEFAULT_G_TH


class ConfigError(ValueError):
    pass


def parse_bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _opt_int(text):
    return None if text.lower() in ("", "none", "auto") else int(text)


DEFAULTS = {
    "g_th": DEFAULT_G_TH,
    "ll": None,
    "ul": None,
    "epochs": 50,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "seed": 0,
    "power_profile": "desk",
    "pue": PUE,
    "freeze_shared": True,
}

_PARSERS = {
    "g_th": float,
    "ll": _opt_int,
    "ul": _opt_int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "seed": int,
    "power_profile": str,
    "pue": float,
    "freeze_shared": parse_bool,
}


def _check(key, value):
    if value is None:
        return
    if key == "g_th" and not 0.0 <= value <= 1.0:
        raise ValueError("must lie in [0, 1]")
    if key in ("epochs", "ll", "ul") and value < 0:
        raise ValueError("must be non-negative")
    if key in ("batch_size",) and value < 1:
        raise ValueError("must be positive")
    if key in ("learning_rate", "pue") and value <= 0:
        raise ValueError("must be positive")


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            parsed = _PARSERS[key](value)
            _check(key, parsed)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r} ({exc})") from None
        values[key] = parsed
    return values


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def resolve(cli: dict, file_values: dict | None = None) -> dict:
    """Merge flag values (``None`` = unset) over file values over defaults."""
    out = dict(DEFAULTS)
    out.update(file_values or {})
    for key, value in cli.items():
        if key in DEFAULTS and value is not None:
            try:
                _check(key, value)
            except ValueError as exc:
                raise ConfigError(f"--{key.replace('_', '-')}: {exc}") from None
            out[key] = value
    return out
