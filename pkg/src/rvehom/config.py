"""Flat key/value config files for generation, homogenization and campaigns.

The format is one `key = value` assignment per line, `#` comments, and
bracketed arrays for sweep axes (`contrast = [16, 2048]`).  Unknown keys are
hard errors: silent typos must not poison long campaigns.  Parsing,
normalization and serialization round-trip exactly, and the config hash is
stable under key reordering.
"""

from __future__ import annotations

import ast
import hashlib


class ConfigError(ValueError):
    """Malformed config file, unknown key, or invalid value."""


# key -> (python type, default, sweepable)
SCHEMA: dict[str, tuple[type, object, bool]] = {
    # generation
    "method": (str, "rsa", False),
    "f_sp": (float, 0.0, True),
    "f_cyl": (float, 0.0, True),
    "n_sp": (int, 0, True),
    "n_cyl": (int, 0, True),
    "aspect_ratio": (float, 3.0, True),
    "rsa_max_attempts": (int, 1_000_000, False),
    "md_epsilon_stop": (float, 1e-12, False),
    "md_dt": (float, 0.2, False),
    "md_max_steps": (int, 20_000, False),
    "md_damping": (float, 1.0, False),
    # imperfections
    "wave_amplitude": (float, 0.0, True),
    "wave_count": (int, 0, False),
    "defect_zone_fraction": (float, 0.0, True),
    "defect_zone_count": (int, 0, False),
    # materials
    "matrix_young": (float, 1.0, False),
    "matrix_poisson": (float, 0.3, False),
    "contrast": (float, 1.0, True),
    # discretization and solver
    "resolution": (int, 64, False),
    "supersample": (bool, False, False),
    "acc": (float, 1e-6, False),
    "max_iterations": (int, 1000, False),
    "fft_workers": (int, 1, False),
    # campaign
    "base_seed": (int, 0, False),
    "samples_per_point": (int, 10, False),
    "escalate_to": (int, 20, False),
    "escalate_rel_width": (float, 0.05, False),
    "confidence_level": (float, 0.95, False),
    "max_total_samples": (int, 10_000, False),
    "workers": (int, 1, False),
}

_BOOL_WORDS = {"true": True, "false": False}


def _coerce_scalar(key: str, raw: object):
    typ = SCHEMA[key][0]
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.lower() in _BOOL_WORDS:
            return _BOOL_WORDS[raw.lower()]
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    if typ is int:
        if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        val = float(raw)
        if val != int(val):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return int(val)
    if typ is float:
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return str(raw)


def _parse_value(key: str, text: str):
    try:
        raw = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raw = text  # bare word (e.g. method = rsa)
    if isinstance(raw, (list, tuple)):
        if not SCHEMA[key][2]:
            raise ConfigError(f"{key}: arrays are only allowed on sweep axes")
        if len(raw) == 0:
            raise ConfigError(f"{key}: empty array")
        return [_coerce_scalar(key, v) for v in raw]
    return _coerce_scalar(key, raw)


def parse_config(text: str) -> dict:
    """Parse config text into a {key: value-or-list} dict (no defaults)."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, rhs = body.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not rhs:
            raise ConfigError(f"line {lineno}: missing value for {key!r}")
        values[key] = _parse_value(key, rhs)
    return values


def normalize(values: dict) -> dict:
    """Fill defaults for missing keys; values keep their parsed types."""
    for key in values:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
    out = {}
    for key, (_typ, default, _sweep) in SCHEMA.items():
        out[key] = values.get(key, default)
    return out


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    return str(v)


def serialize(values: dict) -> str:
    """Canonical text form: sorted keys, one assignment per line."""
    lines = [f"{k} = {_fmt_value(values[k])}" for k in sorted(values)]
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> str:
    """Hash of the normalized canonical form; stable under key reordering."""
    return hashlib.sha256(serialize(normalize(values)).encode()).hexdigest()


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return normalize(parse_config(fh.read()))


def sweep_axes(values: dict) -> dict[str, list]:
    """The axes given as arrays, in schema order."""
    return {
        k: list(v)
        for k, v in values.items()
        if isinstance(v, list) and SCHEMA[k][2]
    }
