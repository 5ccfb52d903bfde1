"""Flat key=value configuration for the server and CLI.

Precedence, lowest to highest: built-in defaults, the config file
(path from --config or the CAMPUS_PASS_CONFIG environment variable),
then command-line overrides.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import PlatformConfig

ENV_VAR = "CAMPUS_PASS_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    host: str = "127.0.0.1"
    http_port: int = 7400
    wire_port: int = 7410
    event_log: str = ""  # empty = in-memory only
    admin_token: str = "campus-admin"
    device_token: str = "campus-device"
    modem_msisdn: str = "+910000000000"
    platform: PlatformConfig = field(default_factory=PlatformConfig)


_SETTING_KEYS = {
    "host": str,
    "http_port": int,
    "wire_port": int,
    "event_log": str,
    "admin_token": str,
    "device_token": str,
    "modem_msisdn": str,
}

_PLATFORM_KEYS = {
    "pin_length": int,
    "pin_entry_timeout": float,
    "relock_after": float,
    "failed_attempts_to_lockdown": int,
    "system_phone": str,
}


def parse_config_text(text: str) -> dict[str, str]:
    """key=value lines; blank lines and '#' comments ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _apply(settings: Settings, values: dict[str, str]) -> Settings:
    plain: dict = {}
    platform: dict = {}
    for key, value in values.items():
        if key in _SETTING_KEYS:
            try:
                plain[key] = _SETTING_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        elif key in _PLATFORM_KEYS:
            try:
                platform[key] = _PLATFORM_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    if platform:
        plain["platform"] = replace(settings.platform, **platform)
    return replace(settings, **plain)


def load_settings(path: str | None = None,
                  overrides: dict[str, str] | None = None) -> Settings:
    """Resolve settings from defaults, optional file, and overrides."""
    settings = Settings()
    config_path = path or os.environ.get(ENV_VAR)
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") \
                from None
        settings = _apply(settings, parse_config_text(text))
    if overrides:
        settings = _apply(settings, overrides)
    return settings


def render_settings(settings: Settings) -> str:
    """The file form of a Settings value; load(render(s)) == s."""
    lines = []
    for f in fields(Settings):
        if f.name == "platform":
            continue
        lines.append(f"{f.name}={getattr(settings, f.name)}")
    p = settings.platform
    for name in _PLATFORM_KEYS:
        lines.append(f"{name}={getattr(p, name)}")
    return "\n".join(lines) + "\n"
