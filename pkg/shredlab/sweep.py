"""
Hyperparameter sweep over encoder x decoder x depth x learning rate.

Every cell is trained once per seed. Cells are independent: each builds its
own model, optimizer and shuffle stream, so they may run on a thread pool and
the results table does not depend on execution order. Any exception in a run is logged
and kept in the table with NaN metrics and the error message.
"""

import copy
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from tqdm import tqdm

from .errors import ConfigError
from .fields import SpatioTemporalField
from .rng import derive_seeds
from .train import DataConfig, DatasetSplits, TrainConfig, prepare_splits, train

logger = logging.getLogger(__name__)

# label -> (encoder variant, use_sindy_loss)
ENCODER_VARIANTS: Dict[str, Tuple[str, bool]] = {
    "lstm": ("lstm", False),
    "sl-lstm": ("lstm", True),
    "gru": ("gru", False),
    "sl-gru": ("gru", True),
    "t": ("transformer_vanilla", False),
    "sl-t": ("transformer_vanilla", True),
    "sa-t": ("transformer_sindy", False),
    "sasl-t": ("transformer_sindy", True),
}
DECODER_VARIANTS = ("mlp", "cnn")

CELL_KEYS = ["encoder", "decoder", "n_layers", "lr"]
RUN_COLUMNS = CELL_KEYS + ["seed", "best_val", "test_mse", "params", "checkpoint_bytes", "wall_s", "error"]


@dataclass
class SweepGrid:
    """Axes of the sweep; the defaults give the full 8 x 2 x 4 x 2 = 128-cell grid."""
    encoders: List[str] = field(default_factory=lambda: list(ENCODER_VARIANTS))
    decoders: List[str] = field(default_factory=lambda: list(DECODER_VARIANTS))
    layer_counts: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    lrs: List[float] = field(default_factory=lambda: [1e-2, 1e-3])

    def validate(self) -> None:
        unknown = [e for e in self.encoders if e not in ENCODER_VARIANTS]
        if unknown:
            raise ConfigError(f"unknown encoder label(s) {unknown}; valid: {list(ENCODER_VARIANTS)}")
        unknown = [d for d in self.decoders if d not in DECODER_VARIANTS]
        if unknown:
            raise ConfigError(f"unknown decoder(s) {unknown}; valid: {list(DECODER_VARIANTS)}")
        if not (self.encoders and self.decoders and self.layer_counts and self.lrs):
            raise ConfigError("every sweep axis needs at least one value")
        if any(n < 1 for n in self.layer_counts):
            raise ConfigError(f"layer counts must be >= 1, got {self.layer_counts}")
        if any(lr <= 0 for lr in self.lrs):
            raise ConfigError(f"learning rates must be > 0, got {self.lrs}")


@dataclass(frozen=True)
class SweepCell:
    encoder: str
    decoder: str
    n_layers: int
    lr: float

    @property
    def label(self) -> str:
        return f"{self.encoder}+{self.decoder}_L{self.n_layers}_lr{self.lr:g}"


def enumerate_cells(grid: SweepGrid) -> List[SweepCell]:
    """Cells in a fixed order: encoder, decoder, layer count, learning rate."""
    grid.validate()
    return [SweepCell(e, d, n, lr)
            for e in grid.encoders
            for d in grid.decoders
            for n in grid.layer_counts
            for lr in grid.lrs]


def cell_config(template: TrainConfig, cell: SweepCell) -> TrainConfig:
    """A copy of the template with the cell's encoder, decoder, depth and learning rate."""
    config = copy.deepcopy(template)
    variant, use_sindy_loss = ENCODER_VARIANTS[cell.encoder]
    config.encoder.variant = variant
    config.encoder.use_sindy_loss = use_sindy_loss
    config.encoder.n_layers = cell.n_layers
    config.decoder.variant = cell.decoder
    config.lr = cell.lr
    return config


def run_cell(splits: DatasetSplits, template: TrainConfig, cell: SweepCell, seed: int,
             checkpoint_dir: Optional[Path] = None) -> dict:
    """Train one cell for one seed; a failure becomes a row with NaN metrics."""
    row = {"encoder": cell.encoder, "decoder": cell.decoder, "n_layers": cell.n_layers, "lr": cell.lr,
           "seed": seed}
    checkpoint = None if checkpoint_dir is None else Path(checkpoint_dir) / cell.label / f"seed{seed}.ckpt"
    try:
        run = train(splits, cell_config(template, cell), seed, checkpoint_path=checkpoint)
    except Exception as e:
        logger.warning("%s seed %d failed: %s", cell.label, seed, e)
        row.update(best_val=math.nan, test_mse=math.nan, params=math.nan, checkpoint_bytes=math.nan,
                   wall_s=math.nan, error=f"{type(e).__name__}: {e}")
        return row
    logger.info("%s seed %d: best val %.4e, test %.4e", cell.label, seed, run.best_val_loss, run.test_mse)
    row.update(best_val=run.best_val_loss, test_mse=run.test_mse, params=run.n_params,
               checkpoint_bytes=run.checkpoint_bytes, wall_s=run.wall_time, error="")
    return row


def sweep(fld: SpatioTemporalField, template: TrainConfig, grid: SweepGrid, seeds: Optional[Sequence[int]] = None,
          data: Optional[DataConfig] = None, jobs: int = 1, checkpoint_dir: Optional[Path] = None,
          progress: bool = False) -> pd.DataFrame:
    """Run every cell for every seed and return the per-run table.

    Each seed's data seed fixes its sensor placement, so all cells trained with
    the same seed see the same windows.

    Args:
        fld: Full field; split and windowed once per seed
        template: Settings shared by all cells
        grid: Sweep axes
        seeds: Master seeds (default: ``template.seeds``)
        data: Split and normalization settings
        jobs: Worker threads; 1 runs sequentially
        checkpoint_dir: If given, every run's best checkpoint is saved below it
        progress: Show a progress bar

    Returns:
        One row per (cell, seed) in cell order, then seed order, with columns ``RUN_COLUMNS``
    """
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    template.validate()
    cells = enumerate_cells(grid)
    seeds = list(template.seeds if seeds is None else seeds)
    if not seeds:
        raise ConfigError("seeds must not be empty")
    splits = {seed: prepare_splits(fld, template, data, derive_seeds(seed).data) for seed in seeds}
    tasks = [(i, j, cell, seed) for i, cell in enumerate(cells) for j, seed in enumerate(seeds)]
    logger.info("sweep: %d cells x %d seeds = %d runs on %d worker(s)", len(cells), len(seeds), len(tasks), jobs)

    rows: Dict[Tuple[int, int], dict] = {}
    bar = tqdm(total=len(tasks), desc="sweep", disable=not progress)
    if jobs == 1:
        for i, j, cell, seed in tasks:
            rows[i, j] = run_cell(splits[seed], template, cell, seed, checkpoint_dir)
            bar.update()
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(run_cell, splits[seed], template, cell, seed, checkpoint_dir): (i, j)
                       for i, j, cell, seed in tasks}
            for future in as_completed(futures):
                rows[futures[future]] = future.result()
                bar.update()
    bar.close()

    table = pd.DataFrame([rows[key] for key in sorted(rows)], columns=RUN_COLUMNS)
    n_failed = int((table["error"] != "").sum())
    if n_failed:
        logger.warning("sweep: %d of %d runs failed", n_failed, len(table))
    return table


def aggregate(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample standard deviation per cell, sorted ascending by mean test MSE.

    Failed runs are excluded from the statistics but counted in ``n_runs``. A
    cell with a single successful run has std 0; a cell with none sorts last.
    """
    runs = runs.assign(ok=runs["error"].fillna("").eq(""))
    agg = runs.groupby(CELL_KEYS, sort=False).agg(
        test_mse_mean=("test_mse", "mean"),
        test_mse_std=("test_mse", "std"),
        best_val_mean=("best_val", "mean"),
        best_val_std=("best_val", "std"),
        params=("params", "max"),
        checkpoint_bytes=("checkpoint_bytes", "max"),
        n_runs=("seed", "size"),
        n_ok=("ok", "sum"),
    ).reset_index()
    single = agg["n_ok"] == 1
    agg.loc[single, ["test_mse_std", "best_val_std"]] = 0.0
    return agg.sort_values("test_mse_mean", kind="mergesort", na_position="last").reset_index(drop=True)


def top_k(agg: pd.DataFrame, k: int = 12) -> pd.DataFrame:
    """The k best cells by mean test MSE."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    ranked = agg.sort_values("test_mse_mean", kind="mergesort", na_position="last")
    ranked = ranked[ranked["test_mse_mean"].notna()].head(k).reset_index(drop=True)
    ranked.insert(0, "rank", range(1, len(ranked) + 1))
    return ranked


def write_results(runs: pd.DataFrame, out_dir: Path, k: int = 12) -> Dict[str, Path]:
    """Write runs.csv, aggregate.csv and top<k>.csv into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(runs)
    paths = {"runs": out_dir / "runs.csv", "aggregate": out_dir / "aggregate.csv", "top": out_dir / f"top{k}.csv"}
    runs.to_csv(paths["runs"], index=False)
    agg.to_csv(paths["aggregate"], index=False)
    top_k(agg, k).to_csv(paths["top"], index=False)
    return paths
