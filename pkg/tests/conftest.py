"""
Shared test setup: every test runs in 64-bit precision unless it switches explicitly.
"""

import numpy as np
import pytest

from shredlab.fields import SpatioTemporalField
from shredlab.precision import get_precision, set_precision


@pytest.fixture(autouse=True)
def f64_precision():
    previous = get_precision()
    set_precision("f64")
    yield
    set_precision(previous)


def ramp_field(n_time: int = 10, grid_dims=(2, 3), mask=None, name: str = "ramp") -> SpatioTemporalField:
    """values[t, c] = t * n_cells + c, exact in float32."""
    n_cells = int(np.prod(grid_dims))
    values = np.arange(n_time * n_cells, dtype=np.float64).reshape(n_time, n_cells)
    return SpatioTemporalField.masked(values, list(grid_dims), mask=mask, name=name)
