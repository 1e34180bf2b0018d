"""
Tests for randomized SVD and ROM projection.
"""

import numpy as np
import pytest

from shredlab.errors import ConfigError, ShapeError
from shredlab.fields import SpatioTemporalField
from shredlab.rng import make_rng
from shredlab.rom import build_multifield_rom, fit_rom, rom_decode, rom_encode, rsvd


def decaying_matrix(m: int, n: int, seed: int = 0) -> np.ndarray:
    """m x n matrix with singular values 2^-i."""
    rng = make_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((m, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return u @ np.diag(2.0 ** -np.arange(n)) @ v.T


def test_rank_one_exact():
    """An exact rank-1 matrix is recovered to 1e-8 relative Frobenius error."""
    rng = make_rng(1)
    a = np.outer(rng.standard_normal(30), rng.standard_normal(20))
    basis = rsvd(a, rank=1)
    residual = a - basis.modes @ (basis.modes.T @ a)
    assert np.linalg.norm(residual) / np.linalg.norm(a) < 1e-8


def test_singular_values_match_dense_svd():
    """Top-10 singular values of a 50x40 matrix agree with the exact SVD within 1e-6 relative."""
    a = decaying_matrix(50, 40)
    exact = np.linalg.svd(a, compute_uv=False)[:10]
    basis = rsvd(a, rank=10, n_power_iters=2)
    np.testing.assert_allclose(basis.singular_values, exact, rtol=1e-6)


def test_random_matrix_with_full_sketch():
    """With the sketch clamped to the full column space, a random matrix is exact."""
    a = make_rng(2).standard_normal((50, 40))
    exact = np.linalg.svd(a, compute_uv=False)[:10]
    basis = rsvd(a, rank=10, oversample=40, n_power_iters=2)
    np.testing.assert_allclose(basis.singular_values, exact, rtol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_reconstruction_error_near_optimal(seed):
    """Projection error stays within 1.5x the exact rank-10 error, even for a flat spectrum."""
    a = make_rng(100 + seed).standard_normal((60, 40))
    tail = np.linalg.svd(a, compute_uv=False)[10:]
    basis = rsvd(a, rank=10, seed=seed)
    error = np.linalg.norm(a - basis.modes @ (basis.modes.T @ a))
    assert error <= 1.5 * np.sqrt(np.sum(tail ** 2))


def test_modes_orthonormal_and_sorted():
    """Modes have orthonormal columns and singular values are non-increasing."""
    basis = rsvd(decaying_matrix(30, 25, seed=4), rank=6)
    np.testing.assert_allclose(basis.modes.T @ basis.modes, np.eye(6), atol=1e-10)
    assert np.all(np.diff(basis.singular_values) <= 0)


def test_rsvd_rank_bounds():
    """rank must lie in [1, min(m, n)]."""
    a = np.ones((5, 3))
    with pytest.raises(ConfigError):
        rsvd(a, rank=0)
    with pytest.raises(ConfigError):
        rsvd(a, rank=4)


def test_rsvd_deterministic():
    """The same seed gives the same basis."""
    a = make_rng(5).standard_normal((20, 15))
    np.testing.assert_array_equal(rsvd(a, 3, seed=7).modes, rsvd(a, 3, seed=7).modes)


def test_round_trip_in_span():
    """A field inside span(modes) survives encode/decode within 1e-6."""
    source = SpatioTemporalField(values=decaying_matrix(30, 16).T[:, :16], grid_dims=[4, 4])
    basis = fit_rom(source, rank=3)
    coeffs = make_rng(6).standard_normal((12, 3))
    fld = SpatioTemporalField(values=coeffs @ basis.modes.T, grid_dims=[4, 4])
    encoded = rom_encode(fld, basis)
    assert encoded.grid_dims == [3]
    np.testing.assert_allclose(rom_decode(encoded, basis).values, fld.values, atol=1e-6)


def test_orthogonal_complement_encodes_to_zero():
    """A field orthogonal to every mode has zero coefficients."""
    source = SpatioTemporalField(values=make_rng(8).standard_normal((20, 9)), grid_dims=[3, 3])
    basis = fit_rom(source, rank=2, oversample=10)
    complement = np.eye(9) - basis.modes @ basis.modes.T
    fld = SpatioTemporalField(values=make_rng(9).standard_normal((5, 9)) @ complement, grid_dims=[3, 3])
    np.testing.assert_allclose(rom_encode(fld, basis).values, 0.0, atol=1e-10)


def test_round_trip_error_is_singular_value_tail():
    """Reconstruction error of the fitted field equals the Frobenius tail of the dropped singular values."""
    values = make_rng(10).standard_normal((30, 20))
    fld = SpatioTemporalField(values=values, grid_dims=[4, 5])
    basis = fit_rom(fld, rank=5, oversample=20)
    error = np.linalg.norm(rom_decode(rom_encode(fld, basis), basis).values - values)
    tail = np.sqrt(np.sum(np.linalg.svd(values, compute_uv=False)[5:] ** 2))
    assert error == pytest.approx(tail, rel=1e-6)


def test_encode_shape_mismatch():
    """Encoding a field with another cell count is a ShapeError."""
    basis = fit_rom(SpatioTemporalField(values=np.eye(6)[:, :4] + 0.1, grid_dims=[4]), rank=2)
    with pytest.raises(ShapeError):
        rom_encode(SpatioTemporalField(values=np.ones((3, 5)), grid_dims=[5]), basis)


def test_multifield_rom_dimension():
    """14 fields at rank 20 give a 280-dimensional ROM that decodes back to 14 fields."""
    rng = make_rng(11)
    fields = [SpatioTemporalField(values=rng.standard_normal((30, 25)), grid_dims=[5, 5]) for _ in range(14)]
    rom = build_multifield_rom(fields, rank=20)
    assert rom.dim == 280
    coeffs = rom.encode(fields)
    assert coeffs.values.shape == (30, 280)
    decoded = rom.decode(coeffs)
    assert len(decoded) == 14
    assert decoded[3].grid_dims == [5, 5]
    with pytest.raises(ConfigError):
        rom.encode(fields[:3])


if __name__ == "__main__":
    pytest.main(["-v", __file__])
