"""Run-config files: UTF-8 TOML, flat keys or one level of tables."""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


def load_toml(path: str) -> dict:
    """Read a TOML file into one flat mapping.

    Top-level tables are merged into the result (section names are purely
    organizational); duplicate keys across sections are an error.
    """
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed config {path}: {e}") from None

    flat: dict = {}
    for key, value in doc.items():
        section = value if isinstance(value, dict) else {key: value}
        for k, v in section.items():
            if k in flat:
                raise ConfigError(f"duplicate config key {k!r} in {path}")
            if isinstance(v, dict):
                raise ConfigError(f"config nesting too deep at {key}.{k} in {path}")
            flat[k] = v
    return flat
