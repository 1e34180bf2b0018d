"""
Command-line interface.

    shredlab [-v|-q] generate --config spec.json --out field.stf
    shredlab [-v|-q] train    --dataset field.stf [--preset exp2] [--config run.json] [--train.lr 1e-2 ...]
    shredlab [-v|-q] sweep    --dataset field.stf --preset exp1 [--jobs 4]
    shredlab [-v|-q] eval     --checkpoint runs/seed0 [--split test]
    shredlab [-v|-q] extract  --checkpoint runs/seed0/model.ckpt

Each command's settings are one dataclass resolved by ConfigManager from the
packaged defaults, an optional preset, ``--config`` files and flags.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Type

import tyro

from . import __version__
from .artifacts import (CHECKPOINT, CONFIG, RunManifest, RunMetrics, dumps_json, read_manifest, timestamp, write_json,
                        write_losses, write_manifest, write_metrics, write_odes)
from .converters import config_to_dict, dict_to_config
from .errors import ConfigError, FieldFormatError, NumericalError
from .fields import field_checksum, load_field, save_field
from .loaders import PACKAGE_CONFIG_DIR
from .manager import ConfigManager
from .model import ShredModel
from .precision import get_precision, set_precision
from .rng import derive_seeds
from .sindy import extract_odes, format_system
from .sweep import SweepGrid, sweep, write_results
from .synthetic import GeneratorSpec, gen_from_spec
from .train import DataConfig, TrainConfig, evaluate, prepare_splits, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# --- command configs --------------------------------------------------------

@dataclass
class GenerateConfig(GeneratorSpec):
    """Generate a synthetic STF1 field. The generator spec may come from --config."""
    config: Optional[Path] = None
    out: Path = Path("field.stf")
    params: tyro.conf.Suppress[Dict[str, Any]] = field(default_factory=dict)


@dataclass
class RunConfig:
    """Train one model per seed on an STF1 dataset."""
    config: Optional[Path] = None
    preset: Optional[str] = None
    dataset: Optional[Path] = None
    out_dir: Path = Path("runs")
    seed: Optional[int] = None
    """Train only this master seed instead of train.seeds."""
    progress: bool = False
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seeds(self) -> List[int]:
        return [self.seed] if self.seed is not None else list(self.train.seeds)

    def validate(self) -> None:
        if self.dataset is None:
            raise ConfigError("--dataset is required")
        self.data.validate()
        self.train.validate()


@dataclass
class SweepConfig(RunConfig):
    """Train every grid cell for every seed and write runs/aggregate/top-k tables."""
    out_dir: Path = Path("sweep")
    grid: SweepGrid = field(default_factory=SweepGrid)
    jobs: int = 1
    top_k: int = 12
    save_checkpoints: bool = False

    def validate(self) -> None:
        super().validate()
        self.grid.validate()
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")


@dataclass
class EvalConfig:
    """Evaluate a trained checkpoint on one split of its dataset."""
    checkpoint: Optional[Path] = None
    """Run directory or checkpoint file; the run's manifest.json must sit next to it."""
    dataset: Optional[Path] = None
    """Override the dataset recorded in the manifest."""
    split: Literal["train", "val", "test"] = "test"
    out: Optional[Path] = None

    def validate(self) -> None:
        if self.checkpoint is None:
            raise ConfigError("--checkpoint is required")


@dataclass
class ExtractConfig:
    """Write the ODEs learned by a SINDy-Attention checkpoint as odes.txt and odes.json."""
    checkpoint: Optional[Path] = None
    out_dir: Optional[Path] = None
    """Defaults to the checkpoint's directory."""
    precision: int = 3

    def validate(self) -> None:
        if self.checkpoint is None:
            raise ConfigError("--checkpoint is required")
        if self.precision < 0:
            raise ConfigError(f"precision must be >= 0, got {self.precision}")


def _checkpoint_path(path: Path) -> Path:
    path = Path(path)
    return path / CHECKPOINT if path.is_dir() else path


# --- commands ---------------------------------------------------------------

def cmd_generate(config: GenerateConfig) -> int:
    fld = gen_from_spec(config)
    config.out.parent.mkdir(parents=True, exist_ok=True)
    save_field(fld, config.out)
    valid = fld.values[:, fld.mask]
    print(f"wrote {config.out}: {config.kind} grid {fld.grid_dims} x {fld.n_time} steps, "
          f"{fld.n_valid}/{fld.n_cells} valid cells")
    print(f"min {valid.min():.6g} max {valid.max():.6g} mean {valid.mean():.6g} std {valid.std():.6g}")
    print(f"sha256 {field_checksum(fld)}")
    return EXIT_OK


def _snapshot(config: RunConfig, seed: Optional[int]) -> Dict[str, Any]:
    snapshot = config_to_dict(config)
    snapshot["config"] = None
    if seed is not None:
        snapshot["seed"] = seed
    return snapshot


def cmd_train(config: RunConfig) -> int:
    fld = load_field(config.dataset)
    checksum = field_checksum(fld)
    for seed in config.seeds:
        started = timestamp()
        run_dir = config.out_dir / f"seed{seed}"
        splits = prepare_splits(fld, config.train, config.data, derive_seeds(seed).data)
        run = train(splits, config.train, seed, checkpoint_path=run_dir / CHECKPOINT, progress=config.progress)

        outputs = {"checkpoint": CHECKPOINT, "config": CONFIG}
        write_json(run_dir / CONFIG, _snapshot(config, seed))
        outputs["losses"] = write_losses(run_dir, run.train_losses, run.val_losses, run.n_pruned).name
        outputs["metrics"] = write_metrics(run_dir, RunMetrics(**run.metrics())).name
        if run.symbolic is not None:
            outputs.update({k: p.name for k, p in write_odes(run_dir, run.symbolic).items()})
        write_manifest(run_dir, RunManifest(
            command="train", version=__version__, config=_snapshot(config, seed), dataset=str(config.dataset),
            dataset_checksum=checksum, seed=seed, precision=get_precision(), started=started,
            finished=timestamp(), outputs=outputs))
        print(dumps_json({"run_dir": str(run_dir), "best_val": run.best_val_loss, "best_epoch": run.best_epoch,
                          "test_mse": run.test_mse}))
    return EXIT_OK


def cmd_sweep(config: SweepConfig) -> int:
    started = timestamp()
    fld = load_field(config.dataset)
    checkpoints = config.out_dir / "checkpoints" if config.save_checkpoints else None
    table = sweep(fld, config.train, config.grid, seeds=config.seeds, data=config.data, jobs=config.jobs,
                  checkpoint_dir=checkpoints, progress=config.progress)
    paths = write_results(table, config.out_dir, k=config.top_k)
    write_manifest(config.out_dir, RunManifest(
        command="sweep", version=__version__, config=_snapshot(config, None), dataset=str(config.dataset),
        dataset_checksum=field_checksum(fld), seed=None, precision=get_precision(), started=started,
        finished=timestamp(), outputs={k: p.name for k, p in paths.items()}))

    errors = table["error"]
    failed = errors != ""
    print(f"{len(table) - int(failed.sum())}/{len(table)} runs succeeded; tables in {config.out_dir}")
    if failed.all():
        if errors.str.startswith(NumericalError.__name__).all():
            raise NumericalError(f"all {len(table)} sweep runs diverged")
        raise ConfigError(f"all {len(table)} sweep runs failed; first error: {errors.iloc[0]}")
    return EXIT_OK


def cmd_eval(config: EvalConfig) -> int:
    checkpoint = _checkpoint_path(config.checkpoint)
    manifest = read_manifest(checkpoint.parent)
    set_precision(manifest.precision)
    model, _ = ShredModel.load(checkpoint)
    run = dict_to_config(manifest.config, RunConfig)
    dataset = config.dataset or Path(manifest.dataset)
    fld = load_field(dataset)
    if config.dataset is None and field_checksum(fld) != manifest.dataset_checksum:
        logger.warning("dataset %s changed since the run (checksum mismatch)", dataset)
    splits = prepare_splits(fld, run.train, run.data, derive_seeds(manifest.seed).data)
    result = {"split": config.split, "mse": evaluate(model, getattr(splits, config.split))}
    if config.out is not None:
        write_json(config.out, result)
    print(dumps_json(result))
    return EXIT_OK


def cmd_extract(config: ExtractConfig) -> int:
    checkpoint = _checkpoint_path(config.checkpoint)
    model, _ = ShredModel.load(checkpoint)
    system = extract_odes(model, precision=config.precision)
    paths = write_odes(config.out_dir or checkpoint.parent, system)
    print(format_system(system), end="")
    logger.info("wrote %s and %s", paths["odes_txt"], paths["odes_json"])
    return EXIT_OK


# name -> (config class, handler, preset directory, mode field)
COMMANDS: Dict[str, Tuple[Type, Callable[[Any], int], Optional[Path], Optional[str]]] = {
    "generate": (GenerateConfig, cmd_generate, None, None),
    "train": (RunConfig, cmd_train, PACKAGE_CONFIG_DIR, "preset"),
    "sweep": (SweepConfig, cmd_sweep, PACKAGE_CONFIG_DIR, "preset"),
    "eval": (EvalConfig, cmd_eval, None, None),
    "extract": (ExtractConfig, cmd_extract, None, None),
}


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="shredlab", description="Sparse-sensor SHRED models with SINDy-Attention")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument("args", nargs=argparse.REMAINDER, help="command options (see `shredlab <command> --help`)")
    ns = parser.parse_args(sys.argv[1:] if argv is None else argv)
    setup_logging(ns.verbose, ns.quiet)

    config_class, handler, config_dir, mode_field = COMMANDS[ns.command]
    manager = ConfigManager(config_class, default_config_dir=config_dir, mode_field=mode_field,
                            prog=f"shredlab {ns.command}")
    try:
        return handler(manager.parse_args(ns.args))
    except (ConfigError, FieldFormatError, FileNotFoundError) as e:
        print(f"shredlab {ns.command}: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"shredlab {ns.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
