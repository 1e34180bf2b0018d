"""
Spatio-temporal field storage and the STF1 container format.

STF1 layout (all integers little-endian):
    bytes 0-3       magic b"STF1"
    bytes 4-7       uint32 header length L
    bytes 8..8+L    UTF-8 JSON header {name, grid_dims, n_time, dt, mask_encoding}
    ceil(n_cells/8) bit-packed mask, cell c at byte c // 8, bit c % 8
    n_time*n_cells  float32 values, time-major; masked-invalid cells stored as 0.0
"""

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .errors import BadMagicError, ConfigError, FieldFormatError, HeaderSizeError, NonFiniteDataError
from .precision import get_dtype

logger = logging.getLogger(__name__)

MAGIC = b"STF1"
_PREFIX = struct.Struct("<4sI")


@dataclass(frozen=True, eq=False)
class SpatioTemporalField:
    """A masked space x time array u(x, t).

    Attributes:
        values: Array of shape [n_time, n_cells]
        grid_dims: Spatial extents, prod(grid_dims) == n_cells
        mask: Boolean array of length n_cells, True where the cell holds data
        dt: Nominal sample interval
        name: Label
    """
    values: np.ndarray
    grid_dims: List[int]
    mask: np.ndarray = None
    dt: float = 1.0
    name: str = "field"

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ConfigError(f"field values must be [n_time, n_cells], got shape {values.shape}")
        n_cells = int(np.prod(self.grid_dims)) if len(self.grid_dims) else 0
        if values.shape[1] != n_cells:
            raise ConfigError(
                f"n_cells={values.shape[1]} does not match prod(grid_dims)={n_cells} for grid {list(self.grid_dims)}")
        mask = np.ones(n_cells, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != (n_cells,):
            raise ConfigError(f"mask must have length {n_cells}, got shape {mask.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteDataError(f"field {self.name!r} contains NaN or Inf")
        if np.any(values[:, ~mask] != 0):
            raise ConfigError(f"field {self.name!r} has non-zero values in masked-invalid cells")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        values = values.astype(get_dtype(), copy=True) if values.dtype != get_dtype() else values.copy()
        mask = mask.copy()
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "grid_dims", [int(g) for g in self.grid_dims])

    @classmethod
    def masked(cls, values: np.ndarray, grid_dims: List[int], mask: Optional[np.ndarray] = None,
               dt: float = 1.0, name: str = "field") -> "SpatioTemporalField":
        """Build a field, zeroing every column the mask marks invalid."""
        values = np.array(values, copy=True)
        if mask is not None:
            values[:, ~np.asarray(mask, dtype=bool)] = 0.0
        return cls(values=values, grid_dims=list(grid_dims), mask=mask, dt=dt, name=name)

    @property
    def n_time(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def time_slice(self, start: int, stop: int) -> "SpatioTemporalField":
        """Return the contiguous sub-field for time steps [start, stop)."""
        return SpatioTemporalField(values=self.values[start:stop], grid_dims=self.grid_dims,
                                   mask=self.mask, dt=self.dt, name=self.name)

    def with_values(self, values: np.ndarray, name: Optional[str] = None) -> "SpatioTemporalField":
        return SpatioTemporalField(values=values, grid_dims=self.grid_dims, mask=self.mask,
                                   dt=self.dt, name=self.name if name is None else name)


def field_to_bytes(fld: SpatioTemporalField) -> bytes:
    """Serialize a field to STF1 bytes."""
    header = {
        "name": fld.name,
        "grid_dims": fld.grid_dims,
        "n_time": fld.n_time,
        "dt": float(fld.dt),
        "mask_encoding": "bitpacked",
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    mask_bytes = np.packbits(fld.mask.astype(np.uint8), bitorder="little").tobytes()
    payload = np.ascontiguousarray(fld.values, dtype="<f4").tobytes()
    return _PREFIX.pack(MAGIC, len(header_bytes)) + header_bytes + mask_bytes + payload


def field_from_bytes(data: bytes, source: str = "<bytes>") -> SpatioTemporalField:
    """Parse STF1 bytes.

    Raises:
        BadMagicError: First four bytes are not b"STF1"
        HeaderSizeError: Header or payload length disagrees with the header
        NonFiniteDataError: Payload contains NaN or Inf
    """
    if len(data) < _PREFIX.size:
        raise HeaderSizeError(f"{source}: file too short for an STF1 prefix ({len(data)} bytes)")
    magic, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    header_end = _PREFIX.size + header_len
    if header_end > len(data):
        raise HeaderSizeError(f"{source}: header length {header_len} exceeds file size {len(data)}")
    try:
        header = json.loads(data[_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FieldFormatError(f"{source}: unreadable header: {e}")
    missing = {"name", "grid_dims", "n_time", "dt", "mask_encoding"} - set(header)
    if missing:
        raise FieldFormatError(f"{source}: header missing keys {sorted(missing)}")
    if header["mask_encoding"] != "bitpacked":
        raise FieldFormatError(f"{source}: unsupported mask encoding {header['mask_encoding']!r}")

    grid_dims = [int(g) for g in header["grid_dims"]]
    n_cells = int(np.prod(grid_dims))
    n_time = int(header["n_time"])
    mask_len = math.ceil(n_cells / 8)
    expected = header_end + mask_len + n_time * n_cells * 4
    if len(data) != expected:
        raise HeaderSizeError(
            f"{source}: payload size mismatch, header implies {expected} bytes, file has {len(data)}")

    mask_bits = np.frombuffer(data, dtype=np.uint8, count=mask_len, offset=header_end)
    mask = np.unpackbits(mask_bits, count=n_cells, bitorder="little").astype(bool)
    values = np.frombuffer(data, dtype="<f4", count=n_time * n_cells, offset=header_end + mask_len)
    values = values.reshape(n_time, n_cells)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteDataError(f"{source}: non-finite value at time {bad[0]}, cell {bad[1]}")
    return SpatioTemporalField(values=values, grid_dims=grid_dims, mask=mask,
                               dt=float(header["dt"]), name=str(header["name"]))


def save_field(fld: SpatioTemporalField, path: Union[str, Path]) -> None:
    """Write a field to ``path`` in STF1 format."""
    path = Path(path)
    data = field_to_bytes(fld)
    path.write_bytes(data)
    logger.debug("wrote %s (%d bytes, %d x %d)", path, len(data), fld.n_time, fld.n_cells)


def load_field(path: Union[str, Path]) -> SpatioTemporalField:
    """Read an STF1 file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Field file not found: {path}")
    return field_from_bytes(path.read_bytes(), source=str(path))


def field_checksum(fld: SpatioTemporalField) -> str:
    """SHA-256 of the field's STF1 encoding."""
    return hashlib.sha256(field_to_bytes(fld)).hexdigest()
