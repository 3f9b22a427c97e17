"""Bootstrap home directory resolution.

The per-actor root store and root namer live under one directory, selected
by the XBASE_HOME environment variable with a platform user-data fallback.
Two processes given the same XBASE_HOME resolve the same paths.
"""
from __future__ import annotations

import os
import sys
from pathlib import Path

ENV_VAR = "XBASE_HOME"
ROOT_STORE_FILENAME = "root.store"
ROOT_NAMER_FILENAME = "root.namer"


def xbase_home(home: str | os.PathLike | None = None) -> Path:
    """Resolve the bootstrap directory, creating it if needed."""
    if home is not None:
        path = Path(home)
    else:
        env = os.environ.get(ENV_VAR)
        path = Path(env) if env else _user_data_dir() / "xbase"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _user_data_dir() -> Path:
    if sys.platform == "win32":
        base = os.environ.get("APPDATA")
        return Path(base) if base else Path.home() / "AppData" / "Roaming"
    if sys.platform == "darwin":
        return Path.home() / "Library" / "Application Support"
    base = os.environ.get("XDG_DATA_HOME")
    return Path(base) if base else Path.home() / ".local" / "share"
