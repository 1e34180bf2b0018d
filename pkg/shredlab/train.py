"""
Training: data preparation, loss composition, the optimization loop and evaluation.

A run is fully determined by its TrainConfig and one master seed, which is
expanded into data / init / shuffle seeds. The returned model carries the
parameters (and prune masks) of the best validation epoch at or after
min_checkpoint_epoch.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import nn
from .decoders import DecoderConfig
from .encoders import EncoderConfig, LatentSequence
from .errors import ConfigError, NumericalError
from .fields import SpatioTemporalField
from .model import ModelConfig, ShredModel
from .nn import Tape, Var
from .optim import make_optimizer
from .precision import get_dtype
from .preprocess import (LaggedDataset, Scaler, SensorSet, chronological_split, make_lagged_dataset,
                         minmax_normalize, sample_sensors)
from .rng import derive_seeds, make_rng
from .rom import fit_rom, rom_encode
from .sindy import SymbolicSystem, extract_odes, prune_model

logger = logging.getLogger(__name__)


@dataclass
class DataConfig:
    """How a field becomes train/val/test windows.

    Attributes:
        split: Chronological train/val/test fractions
        normalize: full (min/max over the whole series), train (first split only) or none
        rom_rank: If > 0, targets are the field's rank-r ROM coefficients instead of the full grid
    """
    split: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    normalize: Literal["full", "train", "none"] = "full"
    rom_rank: int = 0

    def validate(self) -> None:
        if len(self.split) != 3:
            raise ConfigError(f"split must have three fractions, got {self.split}")
        if self.rom_rank < 0:
            raise ConfigError(f"rom_rank must be >= 0, got {self.rom_rank}")


@dataclass
class TrainConfig:
    """Model and optimization settings for one run (or one sweep template)."""
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    k_lag: int = 50
    n_sensors: int = 50
    target_offset: int = 1
    lr: float = 1e-3
    n_epochs: int = 100
    batch_size: int = 64
    lambda_sindy: float = 0.1
    lambda_reg: float = 1e-3
    prune_every: int = 10
    prune_tau: float = 0.05
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    min_checkpoint_epoch: int = 10
    optimizer: Literal["adam", "sgd"] = "adam"

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.n_epochs < 1:
            raise ConfigError(f"n_epochs must be >= 1, got {self.n_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.k_lag < 1 or self.n_sensors < 1:
            raise ConfigError(f"k_lag and n_sensors must be >= 1, got {self.k_lag}, {self.n_sensors}")
        if self.lambda_sindy < 0 or self.lambda_reg < 0 or self.prune_tau < 0 or self.prune_every < 0:
            raise ConfigError("lambda_sindy, lambda_reg, prune_tau and prune_every must be >= 0")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        self.encoder.validate()
        self.decoder.validate()


@dataclass(eq=False)
class DatasetSplits:
    train: LaggedDataset
    val: LaggedDataset
    test: LaggedDataset
    sensors: SensorSet
    scaler: Optional[Scaler] = None
    grid_dims: Optional[List[int]] = None

    @property
    def n_state(self) -> int:
        return self.train.n_state

    @property
    def mask(self) -> np.ndarray:
        return self.train.mask


@dataclass
class TrainRun:
    """Outcome of one training run.

    Attributes:
        train_losses / val_losses: Per-epoch losses (train includes the SINDy term)
        best_val_loss / best_epoch: Selected checkpoint (epoch is 1-based)
        n_pruned: Pruned coefficient count after each epoch
    """
    seed: int
    train_losses: List[float]
    val_losses: List[float]
    best_val_loss: float
    best_epoch: int
    test_mse: float
    wall_time: float
    n_params: int
    checkpoint_bytes: int
    n_pruned: List[int] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    symbolic: Optional[SymbolicSystem] = None
    model: Optional[ShredModel] = field(default=None, repr=False)

    def metrics(self) -> dict:
        return {
            "seed": self.seed,
            "best_val": self.best_val_loss,
            "best_epoch": self.best_epoch,
            "test_mse": self.test_mse,
            "params": self.n_params,
            "checkpoint_bytes": self.checkpoint_bytes,
        }


# --- data -------------------------------------------------------------------

def prepare_splits(fld: SpatioTemporalField, config: TrainConfig, data: Optional[DataConfig] = None,
                   data_seed: int = 0) -> DatasetSplits:
    """Normalize, split chronologically, place sensors and window each split.

    Raises:
        ConfigError: if a split is too short for k_lag + target_offset
    """
    data = data or DataConfig()
    data.validate()
    scaler = None
    if data.normalize != "none":
        fit_steps = math.floor(fld.n_time * data.split[0] + 1e-9) if data.normalize == "train" else None
        fld, scaler = minmax_normalize(fld, fit_steps=fit_steps)

    target = None
    grid_dims = list(fld.grid_dims)
    if data.rom_rank:
        target = rom_encode(fld, fit_rom(fld, data.rom_rank, seed=data_seed))
        grid_dims = None

    sensors = sample_sensors(fld, config.n_sensors, data_seed)
    parts = chronological_split(fld, data.split)
    target_parts = chronological_split(target, data.split) if target is not None else (None,) * 3
    datasets = []
    for name, part, target_part in zip(("train", "val", "test"), parts, target_parts):
        try:
            datasets.append(make_lagged_dataset(part, sensors, config.k_lag, config.target_offset, targets=target_part))
        except ConfigError as e:
            raise ConfigError(f"{name} split: {e}") from e
    logger.info("windows: train %d, val %d, test %d (k_lag=%d, %d sensors)",
                *(d.n_samples for d in datasets), config.k_lag, config.n_sensors)
    return DatasetSplits(*datasets, sensors=sensors, scaler=scaler, grid_dims=grid_dims)


def model_config_for(config: TrainConfig, splits: DatasetSplits) -> ModelConfig:
    return ModelConfig(encoder=config.encoder, decoder=config.decoder, n_sensors=splits.sensors.n_sensors,
                       n_state=splits.n_state, grid_dims=splits.grid_dims)


# --- loss and evaluation ----------------------------------------------------

def compose_loss(tape: Tape, pred: Var, target: np.ndarray, latent: Optional[LatentSequence],
                 model: Optional[ShredModel], config: TrainConfig, mask: Optional[np.ndarray] = None) -> Var:
    """Masked MSE, plus lambda_sindy times the SINDy losses when the encoder uses them."""
    loss = nn.masked_mse(tape, pred, np.asarray(target, dtype=pred.value.dtype), mask)
    if model is None or latent is None or config.lambda_sindy == 0:
        return loss
    sindy = model.sindy_loss(tape, latent, config.lambda_reg)
    if sindy is None:
        return loss
    return nn.add(tape, loss, nn.scale(tape, sindy, config.lambda_sindy))


def evaluate(model: ShredModel, split: LaggedDataset, batch_size: int = 256) -> float:
    """MSE over all samples and masked-valid state entries."""
    if split.n_samples == 0:
        raise ConfigError("cannot evaluate on an empty split")
    pred = model.predict(split.inputs.astype(get_dtype()), batch_size=batch_size).astype(np.float64)
    diff = (pred - split.targets)[:, split.mask]
    return float(np.mean(diff ** 2))


def select_best_epoch(val_losses: Sequence[float], min_epoch: int) -> Tuple[int, float]:
    """(1-based epoch, loss) of the lowest validation loss at epochs >= min_epoch.

    The floor is clamped to the number of epochs; ties keep the earliest epoch.
    """
    if not val_losses:
        raise ConfigError("no validation losses to select from")
    floor = max(1, min(min_epoch, len(val_losses)))
    tail = np.asarray(val_losses[floor - 1:], dtype=np.float64)
    best = int(np.argmin(tail))
    return floor + best, float(tail[best])


# --- training loop ----------------------------------------------------------

def train(splits: DatasetSplits, config: TrainConfig, seed: int, checkpoint_path: Optional[Path] = None,
          progress: bool = False) -> TrainRun:
    """Train one model.

    Raises:
        NumericalError: non-finite loss, with the epoch and batch where it happened
    """
    config.validate()
    if splits.train.n_samples == 0 or splits.val.n_samples == 0:
        raise ConfigError("train and validation splits must be non-empty after windowing")
    start = time.perf_counter()
    seeds = derive_seeds(seed)
    model = ShredModel(model_config_for(config, splits), init_seed=seeds.init)
    optimizer = make_optimizer(config.optimizer, model.store, config.lr)
    shuffle = make_rng(seeds.shuffle)

    dtype = get_dtype()
    inputs = splits.train.inputs.astype(dtype)
    targets = splits.train.targets.astype(dtype)
    n = splits.train.n_samples
    floor = min(config.min_checkpoint_epoch, config.n_epochs)

    train_losses, val_losses, n_pruned = [], [], []
    best_state, best_val = None, math.inf
    epochs = tqdm(range(1, config.n_epochs + 1), desc=f"seed {seed}", disable=not progress, leave=False)
    for epoch in epochs:
        order = shuffle.permutation(n)
        total = 0.0
        for batch, offset in enumerate(range(0, n, config.batch_size), 1):
            idx = order[offset:offset + config.batch_size]
            model.store.zero_grad()
            tape = Tape()
            try:
                out = model.forward(tape, inputs[idx])
                loss = compose_loss(tape, out.pred, targets[idx], out.latent, model, config, splits.mask)
            except NumericalError as e:
                raise NumericalError(e.reason, epoch=epoch, batch=batch, substep=e.substep) from e
            value = float(loss.value)
            if not math.isfinite(value):
                raise NumericalError("non-finite training loss", epoch=epoch, batch=batch)
            tape.backward(loss)
            optimizer.step()
            total += value * len(idx)
        train_losses.append(total / n)

        if config.prune_every and epoch % config.prune_every == 0:
            pruned = prune_model(model, config.prune_tau)
        else:
            pruned = sum(int((~c.prune_mask).sum()) for _, c in model.sindy_coefficients())
        n_pruned.append(pruned)

        val = evaluate(model, splits.val)
        if not math.isfinite(val):
            raise NumericalError("non-finite validation loss", epoch=epoch)
        val_losses.append(val)
        if epoch >= floor and val < best_val:
            best_val, best_state = val, model.store.state_dict()
        logger.info("epoch %d/%d train %.4e val %.4e pruned %d", epoch, config.n_epochs, train_losses[-1], val, pruned)

    best_epoch, best_val = select_best_epoch(val_losses, config.min_checkpoint_epoch)
    model.store.load_state_dict(best_state)
    test_mse = evaluate(model, splits.test) if splits.test.n_samples else math.nan
    symbolic = extract_odes(model) if config.encoder.variant == "transformer_sindy" else None
    if checkpoint_path is not None:
        checkpoint_bytes = model.save(checkpoint_path, extra={"seed": seed, "best_epoch": best_epoch}).stat().st_size
    else:
        checkpoint_bytes = model.checkpoint_bytes
    run = TrainRun(seed=seed, train_losses=train_losses, val_losses=val_losses, best_val_loss=best_val,
                   best_epoch=best_epoch, test_mse=test_mse, wall_time=time.perf_counter() - start,
                   n_params=model.n_params, checkpoint_bytes=checkpoint_bytes, n_pruned=n_pruned,
                   checkpoint_path=checkpoint_path, symbolic=symbolic, model=model)
    logger.info("seed %d: best val %.4e at epoch %d, test %.4e", seed, best_val, best_epoch, test_mse)
    return run
