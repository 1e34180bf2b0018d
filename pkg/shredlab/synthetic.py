"""
Synthetic spatio-temporal fields for desk-scale experiments.

Kinds:
    traveling_waves  sum of up to 5 sinusoidal plane waves
    linear_modes     fixed spatial modes driven by a stable linear ODE, integrated exactly
    noisy_mix        another kind plus i.i.d. Gaussian noise
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import scipy.linalg

from .errors import ConfigError
from .fields import SpatioTemporalField
from .rng import make_rng

logger = logging.getLogger(__name__)

KINDS = ("traveling_waves", "linear_modes", "noisy_mix")
MAX_WAVES = 5
# two undamped oscillators (periods ~63 and ~27 steps at dt=1)
DEFAULT_SYSTEM = [[0.0, -0.1, 0.0, 0.0],
                  [0.1, 0.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0, -0.23],
                  [0.0, 0.0, 0.23, 0.0]]


@dataclass
class GeneratorSpec:
    """JSON-facing description of a synthetic dataset (the ``generate`` command input)."""
    kind: str = "traveling_waves"
    grid_dims: List[int] = field(default_factory=lambda: [32, 32])
    n_time: int = 400
    seed: int = 0
    dt: float = 1.0
    name: str = "synthetic"
    params: Dict[str, Any] = field(default_factory=dict)


def _grid_coords(grid_dims: List[int]) -> np.ndarray:
    """[n_cells, n_dims] coordinates in [0, 1), row-major like the flattened field."""
    axes = [np.arange(g) / g for g in grid_dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _invalid_mask(n_cells: int, fraction: float, seed: int) -> Optional[np.ndarray]:
    if fraction <= 0:
        return None
    if fraction >= 1:
        raise ConfigError(f"invalid_fraction must be < 1, got {fraction}")
    rng = make_rng([seed, 2])
    mask = np.ones(n_cells, dtype=bool)
    mask[rng.choice(n_cells, size=int(round(fraction * n_cells)), replace=False)] = False
    return mask


def _traveling_waves(grid_dims, n_time, dt, params, seed) -> np.ndarray:
    coords = _grid_coords(grid_dims)
    waves = params.get("waves")
    if waves is None:
        rng = make_rng(seed)
        n_waves = int(params.get("n_waves", 3))
        if not 1 <= n_waves <= MAX_WAVES:
            raise ConfigError(f"n_waves must be in [1, {MAX_WAVES}], got {n_waves}")
        waves = [{
            "amplitude": float(rng.uniform(0.5, 1.5)),
            "wavevector": [int(k) for k in rng.integers(-3, 4, size=len(grid_dims))],
            "omega": float(rng.uniform(0.05, 0.5)),
            "phase": float(rng.uniform(0, 2 * np.pi)),
        } for _ in range(n_waves)]
    if not 1 <= len(waves) <= MAX_WAVES:
        raise ConfigError(f"traveling_waves takes 1 to {MAX_WAVES} waves, got {len(waves)}")

    t = np.arange(n_time)[:, None] * dt
    values = np.zeros((n_time, coords.shape[0]))
    for wave in waves:
        k = np.asarray(wave["wavevector"], dtype=np.float64)
        if k.shape != (len(grid_dims),):
            raise ConfigError(f"wavevector {list(k)} does not match grid rank {len(grid_dims)}")
        spatial = 2 * np.pi * coords @ k
        values += wave.get("amplitude", 1.0) * np.cos(spatial[None, :] - wave["omega"] * t + wave.get("phase", 0.0))
    return values


def _smooth_modes(grid_dims, n_modes, seed) -> np.ndarray:
    coords = _grid_coords(grid_dims)
    rng = make_rng([seed, 1])
    modes = np.empty((n_modes, coords.shape[0]))
    for i in range(n_modes):
        k = rng.integers(1, 3, size=len(grid_dims))
        phase = rng.uniform(0, 2 * np.pi, size=len(grid_dims))
        modes[i] = np.prod(np.sin(2 * np.pi * coords * k + phase), axis=1)
    return modes


def _linear_modes(grid_dims, n_time, dt, params, seed) -> np.ndarray:
    a = np.atleast_2d(np.asarray(params.get("system", DEFAULT_SYSTEM), dtype=np.float64))
    n_modes = a.shape[0]
    if a.shape != (n_modes, n_modes):
        raise ConfigError(f"system matrix must be square, got shape {a.shape}")
    if np.max(np.linalg.eigvals(a).real) > 1e-12:
        raise ConfigError("linear_modes system must be stable (all eigenvalues with real part <= 0)")
    z = np.asarray(params.get("z0", np.ones(n_modes)), dtype=np.float64)
    if z.shape != (n_modes,):
        raise ConfigError(f"z0 must have length {n_modes}, got shape {z.shape}")

    if "modes" in params:
        modes = np.atleast_2d(np.asarray(params["modes"], dtype=np.float64))
    else:
        modes = _smooth_modes(grid_dims, n_modes, seed)
    if modes.shape != (n_modes, int(np.prod(grid_dims))):
        raise ConfigError(f"modes must have shape {(n_modes, int(np.prod(grid_dims)))}, got {modes.shape}")

    step = scipy.linalg.expm(a * dt)
    latent = np.empty((n_time, n_modes))
    for t in range(n_time):
        latent[t] = z
        z = step @ z
    return latent @ modes + float(params.get("offset", 0.0))


def gen_synthetic(kind: str, grid_dims: List[int], n_time: int, params: Optional[Dict[str, Any]] = None,
                  seed: int = 0, dt: float = 1.0, name: Optional[str] = None) -> SpatioTemporalField:
    """Generate a synthetic field.

    Args:
        kind: One of KINDS
        grid_dims: Spatial extents
        n_time: Number of time steps
        params: Kind-specific parameters:
            traveling_waves: waves=[{amplitude, wavevector, omega, phase}] or n_waves
            linear_modes: system (A, default DEFAULT_SYSTEM), z0, optional modes [n_modes, n_cells], offset
            noisy_mix: base (kind name), sigma, plus the base kind's params
            any kind: invalid_fraction marks a random share of cells invalid
        seed: PRNG seed
        dt: Sample interval

    Raises:
        ConfigError: unknown kind or invalid parameters
    """
    params = dict(params or {})
    if kind not in KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}, expected one of {list(KINDS)}")
    if n_time < 1:
        raise ConfigError(f"n_time must be >= 1, got {n_time}")
    grid_dims = [int(g) for g in grid_dims]

    if kind == "traveling_waves":
        values = _traveling_waves(grid_dims, n_time, dt, params, seed)
    elif kind == "linear_modes":
        values = _linear_modes(grid_dims, n_time, dt, params, seed)
    else:
        base = params.get("base", "traveling_waves")
        if base == "noisy_mix" or base not in KINDS:
            raise ConfigError(f"noisy_mix base must be traveling_waves or linear_modes, got {base!r}")
        sigma = float(params.get("sigma", 0.1))
        if sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {sigma}")
        base_params = {k: v for k, v in params.items() if k not in ("base", "sigma", "invalid_fraction")}
        values = np.array(gen_synthetic(base, grid_dims, n_time, base_params, seed=seed, dt=dt).values,
                          dtype=np.float64)
        if sigma > 0:
            values = values + make_rng([seed, 3]).normal(0.0, sigma, size=values.shape)

    mask = _invalid_mask(values.shape[1], float(params.get("invalid_fraction", 0.0)), seed)
    logger.debug("generated %s field %s x %d", kind, grid_dims, n_time)
    return SpatioTemporalField.masked(values, grid_dims, mask=mask, dt=dt, name=name or kind)


def gen_from_spec(spec: GeneratorSpec) -> SpatioTemporalField:
    return gen_synthetic(spec.kind, spec.grid_dims, spec.n_time, spec.params, seed=spec.seed,
                         dt=spec.dt, name=spec.name)
