"""
SHRED model: temporal encoder + spatial decoder over one ParamStore.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import nn
from .converters import config_to_dict, dict_to_config
from .decoders import DecoderConfig, decode, init_decoder
from .encoders import EncoderConfig, LatentSequence, encode, init_encoder
from .errors import ConfigError
from .nn import ParamStore, Tape, Var
from .precision import get_dtype
from .sindy import SindyCoefficients, library_width, sindy_loss_term

logger = logging.getLogger(__name__)

LATENT_XI = "latent.xi"


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    n_sensors: int = 3
    n_state: int = 1
    grid_dims: Optional[List[int]] = None


@dataclass
class ModelOutput:
    pred: Var
    latent: LatentSequence


class ShredModel:
    """Sensor windows [B, k_lag, n_sensors] -> full state [B, n_state].

    When ``use_sindy_loss`` is set, the model also owns a coefficient matrix for
    the latent trajectory (``latent.xi``, [ℓ(d_model), d_model]).
    """

    def __init__(self, config: ModelConfig, init_seed: int = 0):
        config.encoder.validate()
        config.decoder.validate()
        if config.n_sensors < 1 or config.n_state < 1:
            raise ConfigError(f"n_sensors and n_state must be >= 1, got {config.n_sensors}, {config.n_state}")
        self.config = config
        self.store = ParamStore(init_seed)
        enc = config.encoder
        init_encoder(self.store, enc, config.n_sensors)
        init_decoder(self.store, config.decoder, enc.d_model, config.n_state, config.grid_dims)
        if enc.use_sindy_loss:
            width = library_width(enc.sindy_library, enc.d_model)
            xi = self.store.uniform(LATENT_XI, (width, enc.d_model), fan_in=width)
            self.store.set_mask(LATENT_XI, np.ones(xi.shape, dtype=bool))
        logger.debug("built %s/%s model with %d parameters", enc.variant, config.decoder.variant, self.n_params)

    @property
    def n_params(self) -> int:
        return self.store.n_params

    def forward(self, tape: Tape, windows) -> ModelOutput:
        window = windows if isinstance(windows, Var) else nn.constant(np.asarray(windows, dtype=get_dtype()))
        latent = encode(tape, window, self.config.encoder, self.store)
        z = latent.last(tape)
        pred = decode(tape, z, self.config.decoder, self.store, self.config.grid_dims)
        return ModelOutput(pred=pred, latent=latent)

    def predict(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Forward pass without gradients, in batches."""
        windows = np.asarray(windows)
        outs = [self.forward(Tape(), windows[i:i + batch_size]).pred.value
                for i in range(0, windows.shape[0], batch_size)]
        return np.concatenate(outs, axis=0)

    # --- SINDy systems ------------------------------------------------------

    def head_coefficients(self) -> List[Tuple[int, int, SindyCoefficients]]:
        """(layer, head, coefficients) for every SINDy-Attention head; views into the store."""
        enc = self.config.encoder
        if enc.variant != "transformer_sindy":
            return []
        out = []
        for layer in range(enc.n_layers):
            name = f"encoder.layer{layer}.xi"
            xi, mask = self.store[name].value, self.store.mask(name)
            for head in range(enc.n_heads):
                out.append((layer, head, SindyCoefficients(xi=xi[head], prune_mask=mask[head],
                                                           library=enc.sindy_library, h_step=enc.h_step,
                                                           k_steps=enc.sindy_k_steps)))
        return out

    def sindy_coefficients(self) -> List[Tuple[str, SindyCoefficients]]:
        """Every prunable coefficient matrix, labelled ``L<layer>H<head>`` or ``latent``."""
        enc = self.config.encoder
        out = [(f"L{layer}H{head}", coeffs) for layer, head, coeffs in self.head_coefficients()]
        if LATENT_XI in self.store:
            out.append(("latent", SindyCoefficients(xi=self.store[LATENT_XI].value,
                                                    prune_mask=self.store.mask(LATENT_XI),
                                                    library=enc.sindy_library, h_step=enc.h_step,
                                                    k_steps=enc.sindy_k_steps)))
        return out

    def sindy_loss(self, tape: Tape, latent: LatentSequence, lambda_reg: float) -> Optional[Var]:
        """Sum of SINDy losses over the latent trajectory and, for SINDy-Attention, every head trajectory."""
        enc = self.config.encoder
        if not enc.use_sindy_loss:
            return None
        spec, h, k_steps = enc.sindy_library, enc.h_step, enc.sindy_k_steps
        total = sindy_loss_term(tape, latent.values, self.store.masked(tape, LATENT_XI), spec, h, k_steps, lambda_reg)
        for layer, trajectory in enumerate(latent.head_trajectories):
            xi = self.store.masked(tape, f"encoder.layer{layer}.xi")
            for head in range(enc.n_heads):
                head_traj = nn.getitem(tape, trajectory, (Ellipsis, head, slice(None), slice(None)))
                head_xi = nn.getitem(tape, xi, (head,))
                total = nn.add(tape, total, sindy_loss_term(tape, head_traj, head_xi, spec, h, k_steps, lambda_reg))
        return total

    # --- checkpoints --------------------------------------------------------

    def to_bytes(self, extra: Optional[dict] = None) -> bytes:
        meta = {"model_config": config_to_dict(self.config)}
        meta.update(extra or {})
        return self.store.to_bytes(extra=meta)

    @property
    def checkpoint_bytes(self) -> int:
        return len(self.to_bytes())

    def save(self, path: Path, extra: Optional[dict] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes(extra))
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> Tuple["ShredModel", dict]:
        """Rebuild a model from checkpoint bytes; returns (model, manifest)."""
        manifest, _ = ParamStore.read_manifest(data)
        extra = manifest.get("extra", {})
        if "model_config" not in extra:
            raise ConfigError("checkpoint has no model_config; it was not written by ShredModel")
        model = cls(dict_to_config(extra["model_config"], ModelConfig), init_seed=manifest["init_seed"])
        model.store.load_bytes(data)
        return model, manifest

    @classmethod
    def load(cls, path: Path) -> Tuple["ShredModel", dict]:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes())
