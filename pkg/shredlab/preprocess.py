"""
Normalization, chronological splitting, sensor sampling and lag windowing.

These turn a SpatioTemporalField into the (sensor window -> full state) pairs a
SHRED model trains on.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .fields import SpatioTemporalField
from .rng import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scaler:
    """Global min-max scaling onto [0, 1].

    Attributes:
        min: Minimum over all valid entries used for the fit
        max: Maximum over all valid entries used for the fit
        degenerate: True when max == min; apply() then maps valid entries to 0
    """
    min: float
    max: float
    degenerate: bool = False

    def __post_init__(self):
        if self.max < self.min:
            raise ConfigError(f"Scaler requires max >= min, got min={self.min}, max={self.max}")

    def apply(self, fld: SpatioTemporalField) -> SpatioTemporalField:
        values = np.zeros_like(fld.values)
        if not self.degenerate:
            valid = fld.values[:, fld.mask]
            values[:, fld.mask] = (valid - self.min) / (self.max - self.min)
        return fld.with_values(values)

    def inverse(self, fld: SpatioTemporalField) -> SpatioTemporalField:
        values = np.zeros_like(fld.values)
        valid = fld.values[:, fld.mask]
        values[:, fld.mask] = valid * (self.max - self.min) + self.min
        return fld.with_values(values)


def minmax_normalize(fld: SpatioTemporalField,
                     fit_steps: Optional[int] = None) -> Tuple[SpatioTemporalField, Scaler]:
    """Min-max scale the valid cells of a field with one global min/max.

    Args:
        fld: Field to normalize
        fit_steps: If given, fit min/max on the first ``fit_steps`` time steps only
            (train-only statistics); the whole field is still transformed

    Returns:
        (normalized field, fitted Scaler)
    """
    if fld.n_valid == 0:
        raise ConfigError(f"field {fld.name!r} has no valid cells to normalize")
    fit_values = fld.values if fit_steps is None else fld.values[:fit_steps]
    if fit_values.shape[0] == 0:
        raise ConfigError(f"fit_steps={fit_steps} selects no time steps")
    valid = fit_values[:, fld.mask]
    lo, hi = float(valid.min()), float(valid.max())
    scaler = Scaler(min=lo, max=hi, degenerate=(hi == lo))
    if scaler.degenerate:
        logger.warning("field %r is constant (%g); normalized to zeros", fld.name, lo)
    return scaler.apply(fld), scaler


def chronological_split(fld: SpatioTemporalField,
                        fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> Tuple[SpatioTemporalField, ...]:
    """Split a field into contiguous, ordered time ranges.

    Boundary i sits at floor(n_time * sum(fractions[:i+1])).

    Raises:
        ConfigError: if n_time < 3, a fraction is negative, or fractions do not sum to 1
    """
    if fld.n_time < 3:
        raise ConfigError(f"chronological_split needs at least 3 time steps, got {fld.n_time}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"split fractions must be non-negative, got {list(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {list(fractions)} (sum={sum(fractions)})")
    bounds = [0]
    for cum in np.cumsum(fractions)[:-1]:
        bounds.append(int(math.floor(fld.n_time * cum + 1e-9)))
    bounds.append(fld.n_time)
    return tuple(fld.time_slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]))


def split_tracks(tracks: Sequence[SpatioTemporalField],
                 fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> List[Tuple[SpatioTemporalField, ...]]:
    """Split each independent trajectory chronologically.

    Returns one tuple of splits per track; window them separately and join with
    concat_datasets so no window spans two tracks.
    """
    return [chronological_split(track, fractions) for track in tracks]


@dataclass(frozen=True, eq=False)
class SensorSet:
    """Fixed cell indices read at every time step."""
    indices: np.ndarray
    seed: int

    @property
    def n_sensors(self) -> int:
        return len(self.indices)


def sample_sensors(fld: SpatioTemporalField, n_sensors: int, seed: int) -> SensorSet:
    """Draw ``n_sensors`` distinct valid cells uniformly without replacement.

    The draw uses a PCG64 generator seeded with ``seed``.
    """
    valid = np.flatnonzero(fld.mask)
    if n_sensors < 1:
        raise ConfigError(f"n_sensors must be >= 1, got {n_sensors}")
    if n_sensors > len(valid):
        raise ConfigError(f"n_sensors={n_sensors} exceeds the {len(valid)} valid cells of {fld.name!r}")
    rng = make_rng(seed)
    indices = rng.choice(valid, size=n_sensors, replace=False)
    return SensorSet(indices=indices.astype(np.int64), seed=seed)


@dataclass(frozen=True, eq=False)
class LaggedDataset:
    """Sensor windows paired with full-state targets.

    Attributes:
        inputs: [n_samples, k_lag, n_sensors]; inputs[s] covers times [s, s + k_lag)
        targets: [n_samples, n_state]; targets[s] is the state at s + k_lag - 1 + target_offset
        k_lag: Window length
        target_offset: Steps ahead of the window end (0 = reconstruction)
        mask: [n_state] valid-entry mask used by the loss
    """
    inputs: np.ndarray
    targets: np.ndarray
    k_lag: int
    target_offset: int
    mask: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_state(self) -> int:
        return self.targets.shape[1]

    def subset(self, index: np.ndarray) -> "LaggedDataset":
        return LaggedDataset(inputs=self.inputs[index], targets=self.targets[index], k_lag=self.k_lag,
                             target_offset=self.target_offset, mask=self.mask)


def make_lagged_dataset(fld: SpatioTemporalField, sensors: SensorSet, k_lag: int,
                        target_offset: int = 1,
                        targets: Optional[SpatioTemporalField] = None) -> LaggedDataset:
    """Window a field into SHRED training pairs.

    Args:
        fld: Field the sensors read
        sensors: Sensor cells
        k_lag: Window length
        target_offset: Steps between the window end and the target (0 = reconstruction)
        targets: Time-aligned field to predict instead of ``fld`` (e.g. ROM coefficients)

    Raises:
        ConfigError: if the series is shorter than k_lag + target_offset
    """
    if k_lag < 1:
        raise ConfigError(f"k_lag must be >= 1, got {k_lag}")
    if target_offset < 0:
        raise ConfigError(f"target_offset must be >= 0, got {target_offset}")
    required = k_lag + target_offset
    if fld.n_time < required:
        raise ConfigError(
            f"series {fld.name!r} has {fld.n_time} steps, needs at least k_lag + target_offset = {required}")
    target_field = fld if targets is None else targets
    if target_field.n_time != fld.n_time:
        raise ConfigError(f"target field has {target_field.n_time} steps, sensor field has {fld.n_time}")
    n_samples = fld.n_time - k_lag - target_offset + 1
    traces = fld.values[:, sensors.indices]
    windows = np.lib.stride_tricks.sliding_window_view(traces, k_lag, axis=0)[:n_samples]
    inputs = np.ascontiguousarray(np.swapaxes(windows, 1, 2))
    first_target = k_lag - 1 + target_offset
    return LaggedDataset(inputs=inputs, targets=np.array(target_field.values[first_target:first_target + n_samples]),
                         k_lag=k_lag, target_offset=target_offset, mask=np.array(target_field.mask))


def concat_datasets(datasets: Sequence[LaggedDataset]) -> LaggedDataset:
    """Stack windows from several tracks that share k_lag, offset and mask."""
    if not datasets:
        raise ConfigError("concat_datasets needs at least one dataset")
    first = datasets[0]
    for ds in datasets[1:]:
        if (ds.k_lag, ds.target_offset) != (first.k_lag, first.target_offset):
            raise ConfigError("cannot concatenate datasets with different k_lag/target_offset")
        if ds.mask.shape != first.mask.shape or np.any(ds.mask != first.mask):
            raise ConfigError("cannot concatenate datasets with different masks")
    return LaggedDataset(inputs=np.concatenate([d.inputs for d in datasets]),
                         targets=np.concatenate([d.targets for d in datasets]),
                         k_lag=first.k_lag, target_offset=first.target_offset, mask=first.mask)


def constant_mean_baseline(train: LaggedDataset, split: LaggedDataset) -> float:
    """MSE of predicting the global mean training target for every valid entry of ``split``."""
    mean = float(train.targets[:, train.mask].mean())
    residual = split.targets[:, split.mask] - mean
    return float(np.mean(residual ** 2))
