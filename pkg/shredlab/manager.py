"""
Layered configuration for shredlab commands.

The ConfigManager resolves one command's dataclass from, lowest to highest
priority:
1. Dataclass defaults
2. Base default config (``default.yaml`` in the config directory)
3. Preset config (``default_<preset>.yaml``, selected by the mode field)
4. User config files (``--config``; JSON or YAML, later files override earlier ones)
5. Command-line flags, parsed by tyro
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Generic, List, Optional, Tuple, Type, TypeVar

import tyro

from .converters import config_to_dict, deep_merge, dict_to_config, flatten_keys
from .loaders import find_preset, load_config_file

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ConfigManager(Generic[T]):
    """Manager for layered configuration from CLI args, config files, presets and defaults.

    Features:
    - Accepts both dash and underscore spellings of the mode flag
    - Supports --arg=value and --arg value formats (tyro)
    - Shows defaults from the loaded config files in --help
    - Rejects unknown keys in config files, naming the key path
    - Calls the dataclass's ``validate()`` (if it has one) on the final config
    """

    def __init__(self,
                 config_class: Type[T],
                 default_config_dir: Optional[Path] = None,
                 mode_field: Optional[str] = None,
                 config_field: str = "config",
                 prog: Optional[str] = None):
        """Initialize the config manager.

        Args:
            config_class: The dataclass type to parse configuration into
            default_config_dir: Directory containing default.yaml and default_<mode>.yaml
                presets; None disables both layers
            mode_field: Field that selects the preset, e.g. ``preset`` loads
                default_exp2.yaml for ``--preset exp2``
            config_field: Field name for the user config file path
            prog: Program name shown in --help
        """
        self.config_class = config_class
        self.default_config_dir = default_config_dir
        self.mode_field = mode_field
        self.config_field = config_field
        self.prog = prog

    def _pre_parse(self, argv: List[str]) -> Tuple[List[Path], Optional[str], List[str]]:
        """Pull --config (repeatable) and the mode flag out of argv before tyro sees it."""
        pre_parser = argparse.ArgumentParser(add_help=False)
        config_dest = self.config_field.replace("-", "_")
        pre_parser.add_argument(f"--{self.config_field}", dest=config_dest, type=str, action="append", default=None)
        if self.mode_field:
            mode_dest = self.mode_field.replace("-", "_")
            flags = {f"--{self.mode_field.replace('_', '-')}", f"--{self.mode_field}"}
            pre_parser.add_argument(*sorted(flags), dest=mode_dest, type=str, default=None)
        ns, remaining = pre_parser.parse_known_args(argv)
        paths = [Path(p) for p in (getattr(ns, config_dest, None) or [])]
        mode = getattr(ns, self.mode_field.replace("-", "_"), None) if self.mode_field else None
        return paths, mode, remaining

    def load_layers(self, user_config_paths: List[Path], cli_mode: Optional[str] = None) -> Dict[str, Any]:
        """Merge defaults, base config, preset and user configs into one dict."""
        defaults = self.config_class()
        merged = config_to_dict(defaults)

        base = self._load_default_config()
        if base:
            merged = deep_merge(base, merged)
            logger.debug("default.yaml sets %s", flatten_keys(base))

        user = self._load_user_configs(user_config_paths)

        # Priority for choosing the preset: CLI > user config > default.yaml > dataclass
        mode = cli_mode
        explicit = bool(cli_mode)
        if not mode and self.mode_field:
            if self.mode_field in user:
                mode, explicit = user[self.mode_field], True
            elif self.mode_field in base:
                mode = base[self.mode_field]
            else:
                mode = getattr(defaults, self.mode_field, None)

        if self.mode_field and mode and self.default_config_dir is not None:
            path = find_preset(mode, self.default_config_dir, required=explicit)
            if path is not None:
                preset = load_config_file(path)
                merged = deep_merge(preset, merged)
                logger.debug("preset %s (%s) sets %s", mode, path.name, flatten_keys(preset))
            merged[self.mode_field] = mode

        if user:
            merged = deep_merge(user, merged)
            logger.debug("user config sets %s", flatten_keys(user))
        return merged

    def parse_args(self, argv: Optional[List[str]] = None) -> T:
        """Parse configuration from CLI args and config files.

        1. Pre-parse --config and the mode flag with argparse.
        2. Merge every config layer into a default instance, so tyro's --help
           reflects the loaded files.
        3. Parse the remaining flags with tyro on top of that default.

        Args:
            argv: Command line arguments (defaults to sys.argv[1:])

        Returns:
            Configured instance of the config class

        Raises:
            ConfigError: invalid or unknown config values
            FileNotFoundError: a --config file does not exist
        """
        raw_argv = sys.argv[1:] if argv is None else list(argv)
        user_config_paths, cli_mode, remaining = self._pre_parse(raw_argv)
        logger.debug("config files %s, %s=%s, remaining flags %s",
                     [str(p) for p in user_config_paths], self.mode_field, cli_mode, remaining)

        merged = self.load_layers(user_config_paths, cli_mode)
        default_instance = dict_to_config(merged, self.config_class)
        if hasattr(default_instance, self.config_field) and user_config_paths:
            setattr(default_instance, self.config_field, user_config_paths[-1])

        config = tyro.cli(self.config_class, args=remaining, default=default_instance, prog=self.prog)

        if hasattr(config, self.config_field) and user_config_paths:
            setattr(config, self.config_field, user_config_paths[-1])
        if self.mode_field and cli_mode and hasattr(config, self.mode_field):
            setattr(config, self.mode_field, cli_mode)
        if hasattr(config, "validate"):
            config.validate()
        return config

    def _load_default_config(self) -> Dict[str, Any]:
        if self.default_config_dir is None:
            return {}
        path = self.default_config_dir / "default.yaml"
        return load_config_file(path) if path.exists() else {}

    def _load_user_configs(self, paths: List[Path]) -> Dict[str, Any]:
        """Load and merge user config files in order, later files taking precedence."""
        merged: Dict[str, Any] = {}
        for path in paths:
            merged = deep_merge(load_config_file(path), merged)
        return merged
