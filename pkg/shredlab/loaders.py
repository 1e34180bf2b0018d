"""
Configuration file loaders.

Run configs may be written in YAML or JSON; JSON files are read with the YAML
loader, which accepts them as a subset. Presets are ``default_<name>.yaml`` files
next to the base ``default.yaml``.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .errors import ConfigError

PACKAGE_CONFIG_DIR = Path(__file__).parent / "configs"


def load_config_file(file_path: Path) -> Dict[str, Any]:
    """Load a YAML or JSON file into a dictionary.

    Args:
        file_path: Path to the file

    Returns:
        Dictionary containing the file contents (empty for an empty file)

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file does not parse or is not a mapping
    """
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"Config file not found: {file_path}")
    with open(file_path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Error parsing config file {file_path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {file_path} must contain a mapping, got {type(data).__name__}")
    return data


def list_presets(config_dir: Optional[Path] = None) -> List[str]:
    """Names of the ``default_<name>.yaml`` presets in ``config_dir``."""
    config_dir = config_dir or PACKAGE_CONFIG_DIR
    if not config_dir.is_dir():
        return []
    return sorted(p.stem[len("default_"):] for p in config_dir.glob("default_*.yaml"))


def find_preset(preset: Optional[str], config_dir: Optional[Path] = None,
                required: bool = False) -> Optional[Path]:
    """Locate the preset file for ``preset``.

    Args:
        preset: Preset name, e.g. ``exp2``; None selects nothing
        config_dir: Directory holding the presets
        required: Raise when the preset does not exist

    Returns:
        Path to the preset file, or None if not found and not required

    Raises:
        ConfigError: If the preset is required but not found; the message lists the available ones
    """
    if not preset:
        return None
    config_dir = config_dir or PACKAGE_CONFIG_DIR
    path = config_dir / f"default_{preset}.yaml"
    if path.exists():
        return path
    if required:
        raise ConfigError(f"unknown preset {preset!r}; available presets: {list_presets(config_dir)}")
    return None
