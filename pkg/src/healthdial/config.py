"""Runtime settings for the service and CLI.

Values come from an optional JSON config file overlaid by environment
variables; the environment always wins. The config file path itself comes
from ``HEALTHDIAL_CONFIG`` or an explicit argument.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .model import DEFAULT_MATERIAL_CAP

ENV_PREFIX = "HEALTHDIAL_"


@dataclass
class Settings:
    store_root: Path = Path("healthdial-projects")
    listen: str = "127.0.0.1:8077"
    token: str = ""  # empty disables auth (single-user local tool)
    provider_endpoint: str = ""
    provider_api_key: str = ""
    provider_model: str = ""
    max_repair_attempts: int = 3
    material_cap: int = DEFAULT_MATERIAL_CAP
    free_play_order: bool = False
    fixtures_dir: str = ""  # when set, a scripted provider replaces the HTTP one


_FILE_KEYS = {
    "store_root": ("store_root", Path),
    "listen": ("listen", str),
    "token": ("token", str),
    "provider_endpoint": ("provider_endpoint", str),
    "provider_api_key": ("provider_api_key", str),
    "provider_model": ("provider_model", str),
    "max_repair_attempts": ("max_repair_attempts", int),
    "material_cap": ("material_cap", int),
    "free_play_order": ("free_play_order", bool),
    "fixtures_dir": ("fixtures_dir", str),
}

_ENV_KEYS = {
    "STORE": ("store_root", Path),
    "LISTEN": ("listen", str),
    "TOKEN": ("token", str),
    "PROVIDER_URL": ("provider_endpoint", str),
    "PROVIDER_KEY": ("provider_api_key", str),
    "MODEL": ("provider_model", str),
    "MAX_REPAIR_ATTEMPTS": ("max_repair_attempts", int),
    "MATERIAL_CAP": ("material_cap", int),
    "FREE_PLAY_ORDER": ("free_play_order", None),  # parsed as a flag
    "FIXTURES": ("fixtures_dir", str),
}


def load_settings(
    env: Optional[Mapping[str, str]] = None, config_path: Optional[str | Path] = None
) -> Settings:
    env = os.environ if env is None else env
    settings = Settings()

    path = config_path or env.get(ENV_PREFIX + "CONFIG")
    if path and Path(path).exists():
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        for key, (attr, cast) in _FILE_KEYS.items():
            if key in data:
                setattr(settings, attr, cast(data[key]))

    for suffix, (attr, cast) in _ENV_KEYS.items():
        raw = env.get(ENV_PREFIX + suffix)
        if raw is None:
            continue
        if cast is None:
            setattr(settings, attr, raw.strip().lower() in ("1", "true", "yes", "on"))
        else:
            setattr(settings, attr, cast(raw))
    return settings
