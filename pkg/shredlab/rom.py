"""
Randomized SVD and reduced-order (ROM) projection of fields.

rsvd follows the randomized range finder with power iteration: sketch the range
with a Gaussian test matrix, re-orthonormalize between power iterations, then take
an exact SVD of the small projected matrix. Computation is always float64.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigError, ShapeError
from .fields import SpatioTemporalField
from .rng import make_rng

logger = logging.getLogger(__name__)

DEFAULT_OVERSAMPLE = 10
DEFAULT_POWER_ITERS = 2


@dataclass(frozen=True, eq=False)
class RomBasis:
    """Orthonormal spatial modes of one physical field.

    Attributes:
        modes: [n_cells, rank], orthonormal columns
        singular_values: [rank], non-increasing
        rank: Number of kept modes
        grid_dims: Grid of the field the modes live on (used by rom_decode)
        mask: Valid-cell mask of that field
    """
    modes: np.ndarray
    singular_values: np.ndarray
    rank: int
    grid_dims: Optional[List[int]] = None
    mask: Optional[np.ndarray] = None


def rsvd(matrix: np.ndarray, rank: int, oversample: int = DEFAULT_OVERSAMPLE,
         n_power_iters: int = DEFAULT_POWER_ITERS, seed: int = 0) -> RomBasis:
    """Top-``rank`` left singular vectors and values of ``matrix`` by randomized SVD.

    If rank + oversample exceeds min(m, n) the oversampling is reduced to fit.

    Raises:
        ConfigError: if rank < 1 or rank > min(m, n)
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ConfigError(f"rsvd expects a 2-D matrix, got shape {a.shape}")
    m, n = a.shape
    if rank < 1 or rank > min(m, n):
        raise ConfigError(f"rank must be in [1, {min(m, n)}] for a {m}x{n} matrix, got {rank}")
    sketch = min(rank + max(oversample, 0), min(m, n))
    if sketch < rank + oversample:
        logger.debug("rsvd: oversample reduced from %d to %d", oversample, sketch - rank)

    rng = make_rng(seed)
    omega = rng.standard_normal((n, sketch))
    q, _ = scipy.linalg.qr(a @ omega, mode="economic")
    for _ in range(n_power_iters):
        z, _ = scipy.linalg.qr(a.T @ q, mode="economic")
        q, _ = scipy.linalg.qr(a @ z, mode="economic")

    b = q.T @ a
    u_small, s, _ = scipy.linalg.svd(b, full_matrices=False)
    u = q @ u_small
    return RomBasis(modes=u[:, :rank], singular_values=s[:rank], rank=rank)


def fit_rom(fld: SpatioTemporalField, rank: int, oversample: int = DEFAULT_OVERSAMPLE,
            n_power_iters: int = DEFAULT_POWER_ITERS, seed: int = 0) -> RomBasis:
    """Spatial modes of a field (rSVD of the [n_cells, n_time] snapshot matrix)."""
    basis = rsvd(fld.values.T, rank, oversample=oversample, n_power_iters=n_power_iters, seed=seed)
    return RomBasis(modes=basis.modes, singular_values=basis.singular_values, rank=rank,
                    grid_dims=list(fld.grid_dims), mask=np.array(fld.mask))


def rom_encode(fld: SpatioTemporalField, basis: RomBasis) -> SpatioTemporalField:
    """Project a field onto the basis; returns an [n_time, rank] coefficient field."""
    if fld.n_cells != basis.modes.shape[0]:
        raise ShapeError("rom_encode", (fld.n_time, fld.n_cells), basis.modes.shape)
    coeffs = fld.values.astype(np.float64) @ basis.modes
    return SpatioTemporalField(values=coeffs, grid_dims=[basis.rank], dt=fld.dt, name=f"{fld.name}_rom")


def rom_decode(coeffs: SpatioTemporalField, basis: RomBasis, name: Optional[str] = None) -> SpatioTemporalField:
    """Expand coefficients back onto the full grid."""
    if coeffs.n_cells != basis.rank:
        raise ShapeError("rom_decode", (coeffs.n_time, coeffs.n_cells), basis.modes.shape)
    values = coeffs.values.astype(np.float64) @ basis.modes.T
    grid_dims = basis.grid_dims if basis.grid_dims is not None else [basis.modes.shape[0]]
    label = name or (coeffs.name[:-4] if coeffs.name.endswith("_rom") else coeffs.name)
    return SpatioTemporalField.masked(values, grid_dims, mask=basis.mask, dt=coeffs.dt, name=label)


@dataclass(frozen=True, eq=False)
class MultiFieldRom:
    """One basis per physical field; coefficients are concatenated field by field."""
    bases: List[RomBasis]

    @property
    def dim(self) -> int:
        return sum(b.rank for b in self.bases)

    def encode(self, fields: Sequence[SpatioTemporalField]) -> SpatioTemporalField:
        if len(fields) != len(self.bases):
            raise ConfigError(f"expected {len(self.bases)} fields, got {len(fields)}")
        parts = [rom_encode(f, b).values for f, b in zip(fields, self.bases)]
        return SpatioTemporalField(values=np.concatenate(parts, axis=1), grid_dims=[self.dim],
                                   dt=fields[0].dt, name="multifield_rom")

    def decode(self, coeffs: SpatioTemporalField) -> List[SpatioTemporalField]:
        if coeffs.n_cells != self.dim:
            raise ShapeError("MultiFieldRom.decode", (coeffs.n_time, coeffs.n_cells), (coeffs.n_time, self.dim))
        out, start = [], 0
        for i, basis in enumerate(self.bases):
            part = coeffs.values[:, start:start + basis.rank]
            start += basis.rank
            out.append(rom_decode(SpatioTemporalField(values=part, grid_dims=[basis.rank], dt=coeffs.dt),
                                  basis, name=f"field{i}"))
        return out


def build_multifield_rom(fields: Sequence[SpatioTemporalField], rank: int,
                         oversample: int = DEFAULT_OVERSAMPLE, n_power_iters: int = DEFAULT_POWER_ITERS,
                         seed: int = 0) -> MultiFieldRom:
    """Fit a rank-``rank`` basis to every field independently."""
    if not fields:
        raise ConfigError("build_multifield_rom needs at least one field")
    bases = [fit_rom(f, rank, oversample=oversample, n_power_iters=n_power_iters, seed=seed + i)
             for i, f in enumerate(fields)]
    logger.info("built %d-field ROM, dimension %d", len(bases), sum(b.rank for b in bases))
    return MultiFieldRom(bases=bases)
