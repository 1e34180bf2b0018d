"""
Tests for ShredModel: assembly, SINDy systems and checkpoints.
"""

import numpy as np
import pytest

from shredlab.decoders import DecoderConfig
from shredlab.encoders import EncoderConfig
from shredlab.errors import ConfigError
from shredlab.model import LATENT_XI, ModelConfig, ShredModel
from shredlab.nn import ParamStore, Tape
from shredlab.sindy import LibrarySpec, prune_model


def _sindy_model(use_sindy_loss=True, init_seed=0):
    encoder = EncoderConfig(variant="transformer_sindy", n_layers=2, d_model=4, n_heads=2, d_ff=4,
                            use_sindy_loss=use_sindy_loss,
                            sindy_library=LibrarySpec(include_bias=False, poly_order=1))
    return ShredModel(ModelConfig(encoder=encoder, n_sensors=3, n_state=16), init_seed=init_seed)


def _windows(n=5, k_lag=6, n_sensors=3):
    return np.random.default_rng(0).standard_normal((n, k_lag, n_sensors))


def test_lstm_parameter_count():
    """Lift, gates and output layer add up as expected."""
    d, n_s, n_state = 8, 3, 20
    encoder = EncoderConfig(variant="lstm", n_layers=2, d_model=d)
    model = ShredModel(ModelConfig(encoder=encoder, n_sensors=n_s, n_state=n_state))
    expected = (n_s * d + d) + 2 * (2 * d * 4 * d + 2 * 4 * d) + (d * n_state + n_state)
    assert model.n_params == expected


def test_predict_matches_forward():
    model = _sindy_model()
    windows = _windows(n=7)
    out = model.forward(Tape(), windows)
    assert out.pred.shape == (7, 16)
    np.testing.assert_allclose(model.predict(windows, batch_size=3), out.pred.value, atol=1e-12)


def test_sindy_systems():
    """Every head plus the latent system is listed; head coefficients are views into the store."""
    model = _sindy_model()
    labels = [label for label, _ in model.sindy_coefficients()]
    assert labels == ["L0H0", "L0H1", "L1H0", "L1H1", "latent"]
    assert model.store[LATENT_XI].shape == (4, 4)

    layer, head, coeffs = model.head_coefficients()[1]
    assert (layer, head) == (0, 1)
    coeffs.xi[...] = 0.001
    pruned = prune_model(model, 0.01)
    assert pruned >= 4
    assert not model.store.mask("encoder.layer0.xi")[1].any()
    np.testing.assert_array_equal(model.store["encoder.layer0.xi"].value[1], 0.0)


def test_sindy_loss_only_when_enabled():
    model = _sindy_model(use_sindy_loss=False)
    tape = Tape()
    out = model.forward(tape, _windows())
    assert model.sindy_loss(tape, out.latent, 0.0) is None
    assert LATENT_XI not in model.store

    model = _sindy_model(use_sindy_loss=True)
    tape = Tape()
    out = model.forward(tape, _windows())
    assert float(model.sindy_loss(tape, out.latent, 0.0).value) > 0


def test_save_load_round_trip(tmp_path):
    """A saved model reloads with the same parameters, masks and predictions."""
    model = _sindy_model(init_seed=3)
    prune_model(model, 0.2)
    path = model.save(tmp_path / "run" / "model.ckpt", extra={"seed": 3})
    assert path.stat().st_size == model.checkpoint_bytes + len(',"seed":3')

    loaded, manifest = ShredModel.load(path)
    assert manifest["extra"]["seed"] == 3
    assert manifest["init_seed"] == 3
    for name, var in model.store.items():
        np.testing.assert_array_equal(loaded.store[name].value, var.value)
    np.testing.assert_array_equal(loaded.store.mask(LATENT_XI), model.store.mask(LATENT_XI))
    np.testing.assert_array_equal(loaded.predict(_windows()), model.predict(_windows()))
    assert loaded.config == model.config


def test_cnn_model_round_trip(tmp_path):
    decoder = DecoderConfig(variant="cnn", channels=[2, 2, 2])
    model = ShredModel(ModelConfig(decoder=decoder, encoder=EncoderConfig(d_model=4), n_sensors=3, n_state=64,
                                   grid_dims=[8, 8]))
    loaded, _ = ShredModel.load(model.save(tmp_path / "cnn.ckpt"))
    assert loaded.config.grid_dims == [8, 8]
    np.testing.assert_array_equal(loaded.predict(_windows()), model.predict(_windows()))


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ShredModel.load(tmp_path / "missing.ckpt")
    store = ParamStore()
    store.zeros("a", (2,))
    (tmp_path / "bare.ckpt").write_bytes(store.to_bytes())
    with pytest.raises(ConfigError, match="model_config"):
        ShredModel.load(tmp_path / "bare.ckpt")


def test_cnn_rejects_vector_targets():
    with pytest.raises(ConfigError):
        ShredModel(ModelConfig(decoder=DecoderConfig(variant="cnn"), n_sensors=3, n_state=10, grid_dims=None))


if __name__ == "__main__":
    pytest.main(["-v", __file__])
