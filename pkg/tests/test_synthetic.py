"""
Tests for the synthetic field generators.
"""

import numpy as np
import pytest

from shredlab.errors import ConfigError
from shredlab.synthetic import DEFAULT_SYSTEM, GeneratorSpec, gen_from_spec, gen_synthetic


def test_single_wave_periodic():
    """A wave with temporal period P repeats after P steps."""
    period = 20
    wave = {"amplitude": 1.0, "wavevector": [1, 2], "omega": 2 * np.pi / period, "phase": 0.3}
    fld = gen_synthetic("traveling_waves", [8, 8], 3 * period, {"waves": [wave]})
    np.testing.assert_allclose(fld.values[:period], fld.values[period:2 * period], atol=1e-5)
    assert fld.values.shape == (60, 64)


def test_linear_modes_closed_form():
    """dz/dt = -z from z(0)=1 on one mode m gives frame t = exp(-t dt) m."""
    mode = np.linspace(-1.0, 1.0, 9)
    fld = gen_synthetic("linear_modes", [3, 3], 30, {"system": [[-1.0]], "z0": [1.0], "modes": [mode.tolist()]},
                        dt=0.1)
    for t in (0, 1, 7, 29):
        np.testing.assert_allclose(fld.values[t], np.exp(-t * 0.1) * mode, atol=1e-9)


def test_linear_modes_default_system():
    """Without params the default oscillators give a bounded, non-constant field."""
    fld = gen_synthetic("linear_modes", [8, 8], 200, seed=0)
    assert fld.values.shape == (200, 64)
    assert np.abs(fld.values).max() < 10
    assert fld.values.std() > 1e-3


def test_default_system_is_undamped():
    """Each default oscillator pair keeps its amplitude over the whole series."""
    eigvals = np.linalg.eigvals(np.array(DEFAULT_SYSTEM))
    np.testing.assert_allclose(eigvals.real, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.sort(np.abs(eigvals.imag)), [0.1, 0.1, 0.23, 0.23])
    fld = gen_synthetic("linear_modes", [2, 2], 200, {"modes": np.eye(4).tolist()})
    z = fld.values.astype(np.float64)
    np.testing.assert_allclose(z[:, 0] ** 2 + z[:, 1] ** 2, 2.0, atol=1e-5)
    np.testing.assert_allclose(z[:, 2] ** 2 + z[:, 3] ** 2, 2.0, atol=1e-5)


def test_linear_modes_rejects_unstable():
    """A system with a growing mode is rejected."""
    with pytest.raises(ConfigError):
        gen_synthetic("linear_modes", [2, 2], 10, {"system": [[0.5]]})


def test_noisy_mix_zero_sigma():
    """noisy_mix with sigma=0 equals its base kind."""
    base = gen_synthetic("traveling_waves", [4, 4], 10, {"n_waves": 2}, seed=3)
    noisy = gen_synthetic("noisy_mix", [4, 4], 10, {"base": "traveling_waves", "n_waves": 2, "sigma": 0.0}, seed=3)
    np.testing.assert_array_equal(noisy.values, base.values)


def test_noisy_mix_adds_noise():
    """A positive sigma perturbs the base field."""
    base = gen_synthetic("traveling_waves", [4, 4], 10, seed=3)
    noisy = gen_synthetic("noisy_mix", [4, 4], 10, {"sigma": 0.5}, seed=3)
    assert np.abs(noisy.values - base.values).max() > 0


def test_invalid_fraction_masks_cells():
    """invalid_fraction marks that share of cells invalid and zeroes them."""
    fld = gen_synthetic("traveling_waves", [10, 10], 5, {"invalid_fraction": 0.25}, seed=1)
    assert fld.n_valid == 75
    np.testing.assert_array_equal(fld.values[:, ~fld.mask], 0.0)


def test_unknown_kind():
    """An unknown kind is a ConfigError."""
    with pytest.raises(ConfigError, match="unknown synthetic kind"):
        gen_synthetic("vortex_street", [4, 4], 10)


def test_too_many_waves():
    """More than five waves is rejected."""
    with pytest.raises(ConfigError):
        gen_synthetic("traveling_waves", [4, 4], 10, {"n_waves": 6})


def test_generator_spec_deterministic():
    """The same spec and seed give identical fields; another seed differs."""
    spec = GeneratorSpec(kind="traveling_waves", grid_dims=[6, 6], n_time=20, seed=5)
    a, b = gen_from_spec(spec), gen_from_spec(spec)
    np.testing.assert_array_equal(a.values, b.values)
    spec.seed = 6
    assert not np.array_equal(gen_from_spec(spec).values, a.values)
    assert a.name == "synthetic"


if __name__ == "__main__":
    pytest.main(["-v", __file__])
