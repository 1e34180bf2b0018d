"""
Temporal encoders: stacked GRU/LSTM, vanilla transformer, SINDy-Attention transformer.

Every encoder first lifts the sensor window [B, k_lag, n_sensors] to d_model with an
affine map, then produces a latent sequence [B, n, d_model] whose last row feeds
the decoder. Parameters are registered in a ParamStore under ``encoder.*``.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Tuple

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .nn import ParamStore, Tape, Var
from .sindy import LibrarySpec, library, library_width

logger = logging.getLogger(__name__)

VARIANTS = ("lstm", "gru", "transformer_vanilla", "transformer_sindy")
RECURRENT = ("lstm", "gru")


@dataclass
class EncoderConfig:
    """Temporal encoder settings.

    Attributes:
        variant: lstm, gru, transformer_vanilla or transformer_sindy
        n_layers: Stacked layers (>= 1)
        d_model: Latent width
        n_heads: Attention heads; must divide d_model
        d_ff: Feed-forward width
        sindy_library: Candidate library of the SINDy-Attention heads
        use_sindy_loss: Add the SINDy consistency loss on the latent trajectories
        positional_encoding: sinusoidal or none (transformers only)
        causal: Mask attention to past and current positions
        wrap_norm: Wrap SINDy-Attention in LayerNorm(x + block(x))
        residual_euler: S = T + h_step * Θ(T) Ξ instead of Θ(T) Ξ
        sindy_dt: Sample interval spanned by one rollout
        sindy_k_steps: Euler sub-steps per sample interval
    """
    variant: Literal["lstm", "gru", "transformer_vanilla", "transformer_sindy"] = "gru"
    n_layers: int = 1
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 64
    sindy_library: LibrarySpec = field(default_factory=LibrarySpec)
    use_sindy_loss: bool = False
    positional_encoding: Literal["sinusoidal", "none"] = "sinusoidal"
    causal: bool = False
    wrap_norm: bool = False
    residual_euler: bool = False
    sindy_dt: float = 1.0
    sindy_k_steps: int = 5

    @property
    def is_recurrent(self) -> bool:
        return self.variant in RECURRENT

    @property
    def k_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def h_step(self) -> float:
        return self.sindy_dt / self.sindy_k_steps

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {self.variant!r}, expected one of {list(VARIANTS)}")
        if self.n_layers < 1:
            raise ConfigError(f"encoder n_layers must be >= 1, got {self.n_layers}")
        if self.d_model < 1 or self.d_ff < 1:
            raise ConfigError(f"d_model and d_ff must be >= 1, got {self.d_model}, {self.d_ff}")
        if not self.is_recurrent and (self.n_heads < 1 or self.d_model % self.n_heads):
            raise ConfigError(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.sindy_dt <= 0 or self.sindy_k_steps < 1:
            raise ConfigError(f"sindy_dt must be > 0 and sindy_k_steps >= 1, got {self.sindy_dt}, {self.sindy_k_steps}")
        self.sindy_library.validate()


@dataclass
class LatentSequence:
    """Encoder output.

    Attributes:
        values: [B, n, d_model] latent trajectory; the last row is the decoder input
        head_trajectories: Per SINDy-Attention layer, the head outputs T [B, H, n, k_head]
        attention: Per attention layer, the weights [B, H, n, n]
    """
    values: Var
    head_trajectories: List[Var] = field(default_factory=list)
    attention: List[np.ndarray] = field(default_factory=list)

    def last(self, tape: Tape) -> Var:
        return nn.getitem(tape, self.values, (Ellipsis, -1, slice(None)))


@dataclass
class LayerOutput:
    z: Var
    heads: Var
    weights: np.ndarray


# --- parameters -------------------------------------------------------------

def init_encoder(store: ParamStore, config: EncoderConfig, n_sensors: int) -> None:
    """Register every encoder parameter in ``store``."""
    config.validate()
    d, m = config.d_model, config.d_ff
    store.uniform("encoder.lift.W", (n_sensors, d), fan_in=n_sensors)
    store.zeros("encoder.lift.b", (d,))
    for layer in range(config.n_layers):
        p = f"encoder.layer{layer}"
        if config.is_recurrent:
            gates = 3 if config.variant == "gru" else 4
            store.uniform(f"{p}.W_x", (d, gates * d), fan_in=d)
            store.uniform(f"{p}.W_h", (d, gates * d), fan_in=d)
            store.zeros(f"{p}.b_x", (gates * d,))
            store.zeros(f"{p}.b_h", (gates * d,))
            continue
        for name in ("W_q", "W_k", "W_v"):
            store.uniform(f"{p}.{name}", (d, d), fan_in=d)
        if config.variant == "transformer_vanilla":
            store.uniform(f"{p}.W_o", (d, d), fan_in=d)
            store.ones(f"{p}.ln1_gain", (d,))
            store.zeros(f"{p}.ln1_bias", (d,))
            store.uniform(f"{p}.W_1", (d, m), fan_in=d)
            store.zeros(f"{p}.b_1", (m,))
            store.uniform(f"{p}.W_2", (m, d), fan_in=m)
            store.zeros(f"{p}.b_2", (d,))
            store.ones(f"{p}.ln2_gain", (d,))
            store.zeros(f"{p}.ln2_bias", (d,))
        else:
            width = library_width(config.sindy_library, config.k_head)
            xi = store.uniform(f"{p}.xi", (config.n_heads, width, config.k_head), fan_in=width)
            store.set_mask(f"{p}.xi", np.ones(xi.shape, dtype=bool))
            store.uniform(f"{p}.W_ff1", (d, m), fan_in=d)
            store.uniform(f"{p}.W_ff2", (m, d), fan_in=m)
            if config.wrap_norm:
                store.ones(f"{p}.ln_gain", (d,))
                store.zeros(f"{p}.ln_bias", (d,))


# --- recurrent --------------------------------------------------------------

def _gate(tape: Tape, v: Var, i: int, width: int) -> Var:
    return nn.getitem(tape, v, (Ellipsis, slice(i * width, (i + 1) * width)))


def gru_step(tape: Tape, x_t: Var, h_prev: Var, p: Dict[str, Var]) -> Var:
    """One GRU step: r, u = σ(.), n = tanh(x W_xn + r * (h W_hn + b_hn)), h = (1 - u) n + u h_prev."""
    d = h_prev.shape[-1]
    if p["W_h"].shape != (d, 3 * d):
        raise ShapeError("gru_step", h_prev.shape, p["W_h"].shape)
    gx = nn.affine(tape, x_t, p["W_x"], p["b_x"])
    gh = nn.affine(tape, h_prev, p["W_h"], p["b_h"])
    reset = nn.sigmoid(tape, nn.add(tape, _gate(tape, gx, 0, d), _gate(tape, gh, 0, d)))
    update = nn.sigmoid(tape, nn.add(tape, _gate(tape, gx, 1, d), _gate(tape, gh, 1, d)))
    cand = nn.tanh(tape, nn.add(tape, _gate(tape, gx, 2, d), nn.mul(tape, reset, _gate(tape, gh, 2, d))))
    # h = n + u * (h_prev - n)
    return nn.add(tape, cand, nn.mul(tape, update, nn.sub(tape, h_prev, cand)))


def lstm_step(tape: Tape, x_t: Var, h_prev: Var, c_prev: Var, p: Dict[str, Var]) -> Tuple[Var, Var]:
    """One LSTM step with gate blocks ordered input, forget, cell, output."""
    d = h_prev.shape[-1]
    if p["W_h"].shape != (d, 4 * d) or c_prev.shape != h_prev.shape:
        raise ShapeError("lstm_step", h_prev.shape, c_prev.shape, p["W_h"].shape)
    gates = nn.add(tape, nn.affine(tape, x_t, p["W_x"], p["b_x"]), nn.affine(tape, h_prev, p["W_h"], p["b_h"]))
    i = nn.sigmoid(tape, _gate(tape, gates, 0, d))
    f = nn.sigmoid(tape, _gate(tape, gates, 1, d))
    g = nn.tanh(tape, _gate(tape, gates, 2, d))
    o = nn.sigmoid(tape, _gate(tape, gates, 3, d))
    c = nn.add(tape, nn.mul(tape, f, c_prev), nn.mul(tape, i, g))
    return nn.mul(tape, o, nn.tanh(tape, c)), c


def _lift(tape: Tape, window: Var, store: ParamStore) -> Var:
    lift = store.group(tape, "encoder.lift")
    if window.shape[-1] != lift["W"].shape[0]:
        raise ShapeError("encoder lift", window.shape, lift["W"].shape)
    return nn.affine(tape, window, lift["W"], lift["b"])


def rnn_encode(tape: Tape, window: Var, config: EncoderConfig, store: ParamStore) -> LatentSequence:
    """Stacked GRU/LSTM over a [B, k_lag, n_sensors] window from zero initial states."""
    if not config.is_recurrent:
        raise ConfigError(f"rnn_encode needs a recurrent variant, got {config.variant!r}")
    seq = _lift(tape, window, store)
    batch, n_steps = seq.shape[:-2], seq.shape[-2]
    zeros = nn.constant(np.zeros(batch + (config.d_model,), dtype=seq.value.dtype))
    for layer in range(config.n_layers):
        p = store.group(tape, f"encoder.layer{layer}")
        h, c = zeros, zeros
        states = []
        for t in range(n_steps):
            x_t = nn.getitem(tape, seq, (Ellipsis, t, slice(None)))
            if config.variant == "gru":
                h = gru_step(tape, x_t, h, p)
            else:
                h, c = lstm_step(tape, x_t, h, c, p)
            states.append(h)
        seq = nn.stack(tape, states, axis=-2)
    return LatentSequence(values=seq)


# --- attention --------------------------------------------------------------

def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal encoding [n, d]: sin on even columns, cos on odd columns."""
    pos = np.arange(n)[:, None]
    rates = 1.0 / np.power(10000.0, (2 * (np.arange(d) // 2)) / d)
    angles = pos * rates[None, :]
    return np.where(np.arange(d) % 2 == 0, np.sin(angles), np.cos(angles))


def _split_heads(tape: Tape, v: Var, n_heads: int) -> Var:
    k = v.shape[-1] // n_heads
    return nn.swapaxes(tape, nn.reshape(tape, v, v.shape[:-1] + (n_heads, k)), -3, -2)


def _merge_heads(tape: Tape, v: Var) -> Var:
    merged = nn.swapaxes(tape, v, -3, -2)
    return nn.reshape(tape, merged, merged.shape[:-2] + (merged.shape[-2] * merged.shape[-1],))


def attention_heads(tape: Tape, x: Var, p: Dict[str, Var], n_heads: int,
                    causal: bool = False) -> Tuple[Var, Var]:
    """Per-head scaled dot-product attention.

    Returns:
        (T [..., H, n, k] head outputs, attention weights [..., H, n, n])
    """
    d = x.shape[-1]
    if d % n_heads or p["W_q"].shape != (d, d):
        raise ShapeError("attention_heads", x.shape, p["W_q"].shape)
    k = d // n_heads
    q = _split_heads(tape, nn.affine(tape, x, p["W_q"]), n_heads)
    keys = _split_heads(tape, nn.affine(tape, x, p["W_k"]), n_heads)
    values = _split_heads(tape, nn.affine(tape, x, p["W_v"]), n_heads)
    scores = nn.scale(tape, nn.matmul(tape, q, nn.swapaxes(tape, keys, -1, -2)), 1.0 / np.sqrt(k))
    n = x.shape[-2]
    mask = np.tril(np.ones((n, n), dtype=bool)) if causal else None
    weights = nn.row_softmax(tape, scores, mask=mask)
    return nn.matmul(tape, weights, values), weights


def mhsa(tape: Tape, x: Var, p: Dict[str, Var], n_heads: int, causal: bool = False) -> Var:
    """Concat(head_1 .. head_H) W_o."""
    heads, _ = attention_heads(tape, x, p, n_heads, causal)
    return nn.affine(tape, _merge_heads(tape, heads), p["W_o"])


def transformer_layer(tape: Tape, x: Var, p: Dict[str, Var], n_heads: int, causal: bool = False) -> LayerOutput:
    """Post-norm layer: x~ = LN(x + MHSA(x)), z = LN(x~ + relu(x~ W_1 + b_1) W_2 + b_2)."""
    heads, weights = attention_heads(tape, x, p, n_heads, causal)
    attended = nn.affine(tape, _merge_heads(tape, heads), p["W_o"])
    x_tilde = nn.layer_norm(tape, nn.add(tape, x, attended), p["ln1_gain"], p["ln1_bias"])
    hidden = nn.relu(tape, nn.affine(tape, x_tilde, p["W_1"], p["b_1"]))
    mlp = nn.affine(tape, hidden, p["W_2"], p["b_2"])
    z = nn.layer_norm(tape, nn.add(tape, x_tilde, mlp), p["ln2_gain"], p["ln2_bias"])
    return LayerOutput(z=z, heads=heads, weights=weights.value)


def sindy_attention_layer(tape: Tape, x: Var, p: Dict[str, Var], n_heads: int, spec: LibrarySpec,
                          causal: bool = False, residual_euler: bool = False, h_step: float = 0.2,
                          wrap_norm: bool = False) -> LayerOutput:
    """SINDy-Attention: S_h = Θ(T_h) Ξ_h per head, S = concat(S_h), z = (S W_ff1) W_ff2.

    ``p["xi"]`` is [H, ℓ, k_head] and should already carry its prune mask.
    """
    heads, weights = attention_heads(tape, x, p, n_heads, causal)
    theta = library(tape, heads, spec)
    xi = p["xi"]
    if xi.shape != (n_heads, theta.shape[-1], heads.shape[-1]):
        raise ShapeError("sindy_attention_layer library width", theta.shape, xi.shape)
    s = nn.matmul(tape, theta, xi)
    if residual_euler:
        s = nn.add(tape, heads, nn.scale(tape, s, h_step))
    z = nn.affine(tape, nn.affine(tape, _merge_heads(tape, s), p["W_ff1"]), p["W_ff2"])
    if wrap_norm:
        z = nn.layer_norm(tape, nn.add(tape, x, z), p["ln_gain"], p["ln_bias"])
    return LayerOutput(z=z, heads=heads, weights=weights.value)


# --- dispatch ---------------------------------------------------------------

def transformer_encode(tape: Tape, window: Var, config: EncoderConfig, store: ParamStore) -> LatentSequence:
    x = _lift(tape, window, store)
    if config.positional_encoding == "sinusoidal":
        x = nn.add(tape, x, nn.constant(positional_encoding(x.shape[-2], config.d_model).astype(x.value.dtype)))
    out = LatentSequence(values=x)
    for layer in range(config.n_layers):
        p = store.group(tape, f"encoder.layer{layer}")
        if config.variant == "transformer_vanilla":
            result = transformer_layer(tape, x, p, config.n_heads, config.causal)
        else:
            result = sindy_attention_layer(tape, x, p, config.n_heads, config.sindy_library, causal=config.causal,
                                           residual_euler=config.residual_euler, h_step=config.h_step,
                                           wrap_norm=config.wrap_norm)
            out.head_trajectories.append(result.heads)
        out.attention.append(result.weights)
        x = result.z
    out.values = x
    return out


def encode(tape: Tape, window: Var, config: EncoderConfig, store: ParamStore) -> LatentSequence:
    """Encode a [B, k_lag, n_sensors] window (a single [k_lag, n_sensors] window also works)."""
    config.validate()
    if config.is_recurrent:
        return rnn_encode(tape, window, config, store)
    return transformer_encode(tape, window, config, store)
