"""
Spatial decoders from the final latent vector to the full state.

mlp: (n_layers - 1) ReLU hidden layers of hidden_width, then a linear output layer.
cnn: affine lift to a [c0, g1/4, g2/4] tensor, two stride-2 transposed convolutions
     (kernel 4, padding 1) each followed by ReLU, then a 1x1 convolution to one
     channel per physical field. Grids must therefore be multiples of 4.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

from . import nn
from .errors import ConfigError, ShapeError
from .nn import ParamStore, Tape, Var

logger = logging.getLogger(__name__)

UPSAMPLE = 4
KERNEL = 4


@dataclass
class DecoderConfig:
    """Decoder settings.

    Attributes:
        variant: mlp or cnn
        n_layers: mlp depth (>= 1)
        hidden_width: mlp hidden width
        channels: cnn channel widths [c0, c1, c2] (lift, after first and second upsampling)
    """
    variant: Literal["mlp", "cnn"] = "mlp"
    n_layers: int = 1
    hidden_width: int = 64
    channels: List[int] = field(default_factory=lambda: [8, 8, 8])

    def validate(self) -> None:
        if self.variant not in ("mlp", "cnn"):
            raise ConfigError(f"unknown decoder variant {self.variant!r}, expected 'mlp' or 'cnn'")
        if self.n_layers < 1:
            raise ConfigError(f"decoder n_layers must be >= 1, got {self.n_layers}")
        if self.hidden_width < 1:
            raise ConfigError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError(f"cnn channels must be three positive widths, got {self.channels}")


def cnn_layout(grid_dims: Optional[Sequence[int]]) -> Tuple[int, int, int]:
    """(n_fields, g1, g2) for a [g1, g2] or [n_fields, g1, g2] grid.

    Raises:
        ConfigError: for vector (ROM) targets or grids that are not multiples of 4
    """
    if grid_dims is None or len(grid_dims) not in (2, 3):
        raise ConfigError(f"cnn decoder needs a 2-D grid target [g1, g2] or [fields, g1, g2], got {grid_dims}; "
                          "use the mlp decoder for ROM coefficient targets")
    n_fields, g1, g2 = ([1] + list(grid_dims)) if len(grid_dims) == 2 else list(grid_dims)
    if g1 % UPSAMPLE or g2 % UPSAMPLE or g1 < UPSAMPLE or g2 < UPSAMPLE:
        raise ConfigError(f"cnn decoder cannot reach grid {g1}x{g2}: valid grids have both sides in "
                          f"{{4, 8, 12, 16, ...}} (multiples of {UPSAMPLE})")
    return n_fields, g1, g2


def init_decoder(store: ParamStore, config: DecoderConfig, d_model: int, n_state: int,
                 grid_dims: Optional[Sequence[int]] = None) -> None:
    """Register every decoder parameter in ``store``."""
    config.validate()
    if config.variant == "mlp":
        width = d_model
        for layer in range(config.n_layers):
            out = n_state if layer == config.n_layers - 1 else config.hidden_width
            store.uniform(f"decoder.mlp{layer}.W", (width, out), fan_in=width)
            store.zeros(f"decoder.mlp{layer}.b", (out,))
            width = out
        return
    n_fields, g1, g2 = cnn_layout(grid_dims)
    if n_fields * g1 * g2 != n_state:
        raise ShapeError("cnn decoder grid", (n_fields, g1, g2), (n_state,))
    c0, c1, c2 = config.channels
    coarse = c0 * (g1 // UPSAMPLE) * (g2 // UPSAMPLE)
    store.uniform("decoder.lift.W", (d_model, coarse), fan_in=d_model)
    store.zeros("decoder.lift.b", (coarse,))
    store.uniform("decoder.conv2.W", (c0, c1, KERNEL, KERNEL), fan_in=c0 * KERNEL * KERNEL)
    store.zeros("decoder.conv2.b", (c1,))
    store.uniform("decoder.conv1.W", (c1, c2, KERNEL, KERNEL), fan_in=c1 * KERNEL * KERNEL)
    store.zeros("decoder.conv1.b", (c2,))
    store.uniform("decoder.out.W", (c2, n_fields), fan_in=c2)
    store.zeros("decoder.out.b", (n_fields,))


def mlp_decode(tape: Tape, z: Var, config: DecoderConfig, store: ParamStore) -> Var:
    h = z
    for layer in range(config.n_layers):
        p = store.group(tape, f"decoder.mlp{layer}")
        h = nn.affine(tape, h, p["W"], p["b"])
        if layer < config.n_layers - 1:
            h = nn.relu(tape, h)
    return h


def cnn_decode(tape: Tape, z: Var, config: DecoderConfig, store: ParamStore, grid_dims: Sequence[int]) -> Var:
    """Decode z [B, d_model] to [B, prod(grid_dims)] (row-major over [fields, g1, g2])."""
    n_fields, g1, g2 = cnn_layout(grid_dims)
    if z.value.ndim != 2:
        raise ShapeError("cnn_decode expects [batch, d_model]", z.shape)
    lift = store.group(tape, "decoder.lift")
    h = nn.affine(tape, z, lift["W"], lift["b"])
    h = nn.reshape(tape, h, (z.shape[0], config.channels[0], g1 // UPSAMPLE, g2 // UPSAMPLE))
    for name in ("conv2", "conv1"):
        p = store.group(tape, f"decoder.{name}")
        h = nn.relu(tape, nn.conv_transpose2d(tape, h, p["W"], p["b"], stride=2, padding=1))
    out = store.group(tape, "decoder.out")
    y = nn.conv1x1(tape, h, out["W"], out["b"])
    return nn.reshape(tape, y, (z.shape[0], n_fields * g1 * g2))


def decode(tape: Tape, z: Var, config: DecoderConfig, store: ParamStore,
           grid_dims: Optional[Sequence[int]] = None) -> Var:
    if config.variant == "mlp":
        return mlp_decode(tape, z, config, store)
    return cnn_decode(tape, z, config, store, grid_dims)
