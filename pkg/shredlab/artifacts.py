"""
Run directories and their machine-readable files.

A train run directory holds:
    manifest.json   RunManifest: config snapshot, version, dataset checksum, seed, timestamps, outputs
    config.json     the resolved run config; ``shredlab train --config config.json`` replays the run
    losses.csv      epoch, train_loss, val_loss, n_pruned
    model.ckpt      best checkpoint (SHCK container)
    metrics.json    RunMetrics
    odes.txt/.json  discovered ODEs (SINDy-Attention encoders only)

JSON outputs are validated against the schemas shipped in ``shredlab/schemas``
and then converted back into their dataclass. Non-finite numbers are written
as ``null``; a bare NaN never reaches a file.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

import pandas as pd
from jsonschema import Draft202012Validator

from .converters import config_to_dict, dict_to_config
from .errors import ConfigError
from .sindy import SymbolicSystem, format_system, system_to_json

logger = logging.getLogger(__name__)

T = TypeVar("T")

SCHEMA_DIR = Path(__file__).parent / "schemas"

MANIFEST = "manifest.json"
CONFIG = "config.json"
LOSSES = "losses.csv"
CHECKPOINT = "model.ckpt"
METRICS = "metrics.json"
ODES_TXT = "odes.txt"
ODES_JSON = "odes.json"


@dataclass
class RunManifest:
    """Provenance record, exactly one per artifact directory."""
    command: str = "train"
    version: str = ""
    config: Dict[str, Any] = field(default_factory=dict)
    dataset: str = ""
    dataset_checksum: str = ""
    seed: Optional[int] = None
    precision: str = "f32"
    started: str = ""
    finished: str = ""
    outputs: Dict[str, str] = field(default_factory=dict)


@dataclass
class RunMetrics:
    seed: int = 0
    best_val: float = 0.0
    best_epoch: int = 0
    test_mse: Optional[float] = None
    params: int = 0
    checkpoint_bytes: int = 0


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def load_schema(name: str) -> Dict[str, Any]:
    path = SCHEMA_DIR / f"{name}.schema.json"
    if not path.exists():
        raise FileNotFoundError(f"schema not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def schema_errors(data: Any, schema: Dict[str, Any]) -> List[str]:
    """Every violation of ``schema`` as a ``path: message`` string, ordered by path."""
    errors = sorted(Draft202012Validator(schema).iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
    return [f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]


def validate_document(data: Dict[str, Any], schema_name: str, cls: Type[T]) -> T:
    """Check ``data`` against a shipped schema, then convert it to ``cls``.

    Raises:
        ConfigError: listing the schema violations, or from dict_to_config
    """
    schema = load_schema(schema_name)
    errors = schema_errors(data, schema)
    if errors:
        raise ConfigError(f"{schema.get('title', schema_name)} does not match its schema: {'; '.join(errors)}")
    return dict_to_config(data, cls)


def json_safe(data: Any) -> Any:
    """Replace NaN and infinities with None, recursively."""
    if isinstance(data, float) and not math.isfinite(data):
        return None
    if isinstance(data, dict):
        return {k: json_safe(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [json_safe(v) for v in data]
    return data


def dumps_json(data: Any, **kwargs) -> str:
    """Strict JSON text; non-finite numbers become null."""
    return json.dumps(json_safe(data), allow_nan=False, ensure_ascii=False, **kwargs)


def write_json(path: Path, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def write_manifest(run_dir: Path, manifest: RunManifest) -> Path:
    data = json_safe(config_to_dict(manifest))
    validate_document(data, "manifest", RunManifest)
    return write_json(Path(run_dir) / MANIFEST, data)


def read_manifest(run_dir: Path) -> RunManifest:
    return validate_document(read_json(Path(run_dir) / MANIFEST), "manifest", RunManifest)


def write_metrics(run_dir: Path, metrics: RunMetrics) -> Path:
    data = json_safe(config_to_dict(metrics))
    validate_document(data, "metrics", RunMetrics)
    return write_json(Path(run_dir) / METRICS, data)


def read_metrics(run_dir: Path) -> RunMetrics:
    return validate_document(read_json(Path(run_dir) / METRICS), "metrics", RunMetrics)


def write_losses(run_dir: Path, train_losses: List[float], val_losses: List[float],
                 n_pruned: Optional[List[int]] = None) -> Path:
    path = Path(run_dir) / LOSSES
    path.parent.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame({
        "epoch": range(1, len(train_losses) + 1),
        "train_loss": train_losses,
        "val_loss": val_losses,
        "n_pruned": n_pruned if n_pruned else [0] * len(train_losses),
    })
    table.to_csv(path, index=False, float_format="%.10e")
    return path


def write_odes(out_dir: Path, system: SymbolicSystem) -> Dict[str, Path]:
    """Write odes.txt (block text) and odes.json; the JSON is checked against its schema first."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = system_to_json(system)
    validate_document(json.loads(payload), "odes", SymbolicSystem)
    txt, js = out_dir / ODES_TXT, out_dir / ODES_JSON
    txt.write_text(format_system(system), encoding="utf-8")
    js.write_text(payload + "\n", encoding="utf-8")
    return {"odes_txt": txt, "odes_json": js}
