"""
Conversion between run-configuration dataclasses and plain dictionaries.

This module provides functions for:
- Deep merging of configuration layers, later layers overriding earlier ones
- Converting raw (YAML/JSON/CLI) values to annotated field types, including
  Optional, Literal, List, Tuple, Dict and Path
- Converting dataclasses to JSON-able dicts and back, rejecting unknown keys so a
  typo in a run config fails loudly instead of being silently ignored
"""

import ast
from pathlib import Path
from typing import Any, Literal, Tuple, Type, TypeVar, Union, get_args, get_origin, get_type_hints

import numpy as np

from .errors import ConfigError

T = TypeVar("T")


def deep_merge(override: dict, base: dict) -> dict:
    """Recursively merge override dict into base dict.

    The override dictionary takes precedence over the base dictionary.

    Args:
        override: Dictionary with values to override
        base: Base dictionary with default values

    Returns:
        Merged dictionary
    """
    result = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and k in result and isinstance(result[k], dict):
            result[k] = deep_merge(v, result[k])
        else:
            result[k] = v
    return result


def _parse_sequence(value: str) -> list:
    # "[1, 2, 3]" or "1,2,3"
    try:
        parsed = ast.literal_eval(value)
        if isinstance(parsed, (list, tuple)):
            return list(parsed)
    except (ValueError, SyntaxError):
        pass
    return [item.strip() for item in value.split(",") if item.strip()]


def convert_value_to_type(value: Any, target_type: Any, where: str = "value") -> Any:
    """Convert a value to the annotated ``target_type``.

    Args:
        value: Raw value from YAML, JSON or the command line
        target_type: Field annotation
        where: Key path used in error messages

    Returns:
        Converted value

    Raises:
        ConfigError: If conversion is not possible
    """
    if value is None:
        return None
    origin = get_origin(target_type)

    if origin is Union:
        args = [a for a in get_args(target_type) if a is not type(None)]
        for arg in args:
            try:
                return convert_value_to_type(value, arg, where)
            except ConfigError:
                continue
        raise ConfigError(f"{where}: cannot convert {value!r} to any of {args}")

    if origin is Literal:
        allowed = get_args(target_type)
        if value not in allowed:
            raise ConfigError(f"{where}: {value!r} is not one of {list(allowed)}")
        return value

    if hasattr(target_type, "__dataclass_fields__"):
        return dict_to_config(value, target_type, where)

    try:
        if target_type is bool:
            if isinstance(value, str):
                if value.lower() not in ("true", "yes", "1", "y", "false", "no", "0", "n"):
                    raise ConfigError(f"{where}: {value!r} is not a boolean")
                return value.lower() in ("true", "yes", "1", "y")
            return bool(value)
        if target_type is int:
            number = float(value) if isinstance(value, str) else value
            if float(number) != int(number):
                raise ConfigError(f"{where}: {value!r} is not an integer")
            return int(number)
        if target_type is float:
            return float(value)
        if target_type is str:
            return str(value)
        if target_type is Path:
            return Path(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: cannot convert {value!r} to {target_type.__name__}") from e

    if origin in (list, tuple):
        items = _parse_sequence(value) if isinstance(value, str) else value
        if not isinstance(items, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        args = get_args(target_type)
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(items) != len(args):
                raise ConfigError(f"{where}: expected {len(args)} items, got {len(items)}")
            return tuple(convert_value_to_type(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(items, args)))
        item_type = args[0] if args else Any
        converted = [convert_value_to_type(v, item_type, f"{where}[{i}]") for i, v in enumerate(items)]
        return tuple(converted) if origin is tuple else converted

    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
        _, value_type = get_args(target_type) or (str, Any)
        return {str(k): convert_value_to_type(v, value_type, f"{where}.{k}") for k, v in value.items()}

    return value


def config_to_dict(obj: Any) -> Any:
    """Convert a dataclass instance to a nested, JSON-able dictionary.

    Paths become strings, tuples become lists and numpy scalars/arrays become
    Python numbers/lists.
    """
    if hasattr(obj, "__dataclass_fields__"):
        return {name: config_to_dict(getattr(obj, name)) for name in obj.__dataclass_fields__}
    if isinstance(obj, dict):
        return {str(k): config_to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [config_to_dict(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dict_to_config(data: Any, config_type: Type[T], where: str = "") -> T:
    """Convert a dictionary to a dataclass instance with type conversion.

    Missing keys fall back to the dataclass defaults; unknown keys are rejected.

    Raises:
        ConfigError: on unknown keys, wrong value types or invalid Literal values
    """
    label = where or config_type.__name__
    if isinstance(data, config_type):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{label}: expected a mapping, got {type(data).__name__}")
    known = config_type.__dataclass_fields__
    unknown = sorted(set(data) - set(known))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s) {[prefix + k for k in unknown]} for {config_type.__name__}")

    hints = get_type_hints(config_type)
    values = {name: convert_value_to_type(value, hints[name], f"{where}.{name}" if where else name)
              for name, value in data.items()}
    try:
        return config_type(**values)
    except TypeError as e:
        raise ConfigError(f"cannot build {config_type.__name__} from {sorted(values)}: {e}") from e


def flatten_keys(data: dict, prefix: str = "") -> Tuple[str, ...]:
    """Dotted key paths of a nested dict (used for layer tracing)."""
    keys = []
    for k, v in data.items():
        path = f"{prefix}.{k}" if prefix else str(k)
        keys.extend(flatten_keys(v, path) if isinstance(v, dict) and v else [path])
    return tuple(keys)
