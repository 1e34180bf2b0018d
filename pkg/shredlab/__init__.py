"""
shredlab: sparse-sensor spatio-temporal reconstruction with SHRED-family models.

A model maps a window of k_lag readings from a few fixed sensors to the full
state at the next step: a temporal encoder (LSTM, GRU, transformer or
SINDy-Attention transformer) followed by an MLP or convolutional decoder.
SINDy-Attention heads learn a sparse ODE for their latent trajectory, which can
be extracted as text or JSON.

Example usage:
    from shredlab import TrainConfig, gen_synthetic, prepare_splits, train

    field = gen_synthetic("linear_modes", [8, 8], 200, seed=0)
    config = TrainConfig(k_lag=10, n_sensors=5, n_epochs=50)
    splits = prepare_splits(field, config)
    run = train(splits, config, seed=0)
    print(run.best_val_loss, run.test_mse)
"""

__version__ = "0.1.0"

from .decoders import DecoderConfig
from .encoders import EncoderConfig
from .errors import (BadMagicError, ConfigError, FieldFormatError, HeaderSizeError, NonFiniteDataError,
                     NotSindyModelError, NumericalError, ShapeError, ShredError, TapeError)
from .fields import SpatioTemporalField, field_checksum, load_field, save_field
from .manager import ConfigManager
from .model import ModelConfig, ShredModel
from .precision import get_dtype, get_precision, set_precision
from .preprocess import make_lagged_dataset, minmax_normalize, sample_sensors
from .sindy import LibrarySpec, extract_odes, format_system, parse_system, prune
from .sweep import SweepGrid, aggregate, enumerate_cells, sweep, top_k
from .synthetic import GeneratorSpec, gen_synthetic
from .train import DataConfig, TrainConfig, TrainRun, evaluate, prepare_splits, train

__all__ = [
    "BadMagicError",
    "ConfigError",
    "ConfigManager",
    "DataConfig",
    "DecoderConfig",
    "EncoderConfig",
    "FieldFormatError",
    "GeneratorSpec",
    "HeaderSizeError",
    "LibrarySpec",
    "ModelConfig",
    "NonFiniteDataError",
    "NotSindyModelError",
    "NumericalError",
    "ShapeError",
    "ShredError",
    "ShredModel",
    "SpatioTemporalField",
    "SweepGrid",
    "TapeError",
    "TrainConfig",
    "TrainRun",
    "aggregate",
    "enumerate_cells",
    "evaluate",
    "extract_odes",
    "field_checksum",
    "format_system",
    "gen_synthetic",
    "get_dtype",
    "get_precision",
    "load_field",
    "make_lagged_dataset",
    "minmax_normalize",
    "parse_system",
    "prepare_splits",
    "prune",
    "sample_sensors",
    "save_field",
    "set_precision",
    "sweep",
    "top_k",
    "train",
]

