"""
Tests for sweep enumeration, execution and aggregation.
"""

import importlib
import math

import numpy as np
import pandas as pd
import pytest

from shredlab.decoders import DecoderConfig
from shredlab.encoders import EncoderConfig
from shredlab.errors import ConfigError
from shredlab.synthetic import gen_synthetic
from shredlab.sweep import (RUN_COLUMNS, SweepGrid, aggregate, cell_config, enumerate_cells, sweep, top_k,
                            write_results)
from shredlab.train import DataConfig, TrainConfig

# The package re-exports the sweep() function, which shadows the submodule attribute
sweep_module = importlib.import_module("shredlab.sweep")


def _template():
    return TrainConfig(k_lag=5, n_sensors=3, n_epochs=2, batch_size=16, min_checkpoint_epoch=1, seeds=[0, 1],
                       encoder=EncoderConfig(d_model=4, n_heads=2, d_ff=4), decoder=DecoderConfig(hidden_width=8))


@pytest.fixture
def waves():
    return gen_synthetic("traveling_waves", [4, 4], 60, seed=0)


def test_full_grid():
    """The default grid has 128 cells in encoder, decoder, depth, lr order."""
    cells = enumerate_cells(SweepGrid())
    assert len(cells) == 128
    assert len({c.label for c in cells}) == 128
    assert cells[0].label == "lstm+mlp_L1_lr0.01"
    assert cells[1].label == "lstm+mlp_L1_lr0.001"
    assert cells[-1].label == "sasl-t+cnn_L4_lr0.001"


def test_grid_validation():
    with pytest.raises(ConfigError, match="encoder"):
        SweepGrid(encoders=["rnn"]).validate()
    with pytest.raises(ConfigError, match="decoder"):
        SweepGrid(decoders=["deconv"]).validate()
    with pytest.raises(ConfigError):
        SweepGrid(layer_counts=[]).validate()
    with pytest.raises(ConfigError):
        SweepGrid(lrs=[0.0]).validate()


def test_cell_config_leaves_template_alone():
    template = _template()
    cell = enumerate_cells(SweepGrid(encoders=["sasl-t"], decoders=["cnn"], layer_counts=[3], lrs=[0.5]))[0]
    config = cell_config(template, cell)
    assert (config.encoder.variant, config.encoder.use_sindy_loss) == ("transformer_sindy", True)
    assert (config.encoder.n_layers, config.decoder.variant, config.lr) == (3, "cnn", 0.5)
    assert template.encoder.variant == "gru"
    assert template.decoder.variant == "mlp"
    assert template.lr == 1e-3


def _runs():
    rows = [
        ("gru", "mlp", 1, 0.01, 0, 1.0, 1.0, ""),
        ("gru", "mlp", 1, 0.01, 1, 3.0, 2.0, ""),
        ("t", "mlp", 1, 0.01, 0, 0.5, 0.5, ""),
        ("t", "mlp", 1, 0.01, 1, math.nan, math.nan, "NumericalError: non-finite training loss"),
        ("sa-t", "mlp", 1, 0.01, 0, math.nan, math.nan, "ConfigError: bad"),
    ]
    table = pd.DataFrame([{"encoder": e, "decoder": d, "n_layers": n, "lr": lr, "seed": s, "best_val": v,
                           "test_mse": t, "params": 10, "checkpoint_bytes": 100, "wall_s": 0.1, "error": err}
                          for e, d, n, lr, s, t, v, err in rows])
    return table[RUN_COLUMNS]


def test_aggregate_statistics():
    """Means and sample std per cell; failures excluded; failed cells last."""
    agg = aggregate(_runs())
    assert list(agg["encoder"]) == ["t", "gru", "sa-t"]
    gru = agg[agg["encoder"] == "gru"].iloc[0]
    assert gru["test_mse_mean"] == pytest.approx(2.0)
    assert gru["test_mse_std"] == pytest.approx(math.sqrt(2.0))
    assert (gru["n_runs"], gru["n_ok"]) == (2, 2)
    t = agg[agg["encoder"] == "t"].iloc[0]
    assert t["test_mse_std"] == 0.0
    assert (t["n_runs"], t["n_ok"]) == (2, 1)
    assert math.isnan(agg.iloc[-1]["test_mse_mean"])


def test_top_k():
    agg = aggregate(_runs())
    top = top_k(agg, 12)
    assert list(top["rank"]) == [1, 2]
    assert list(top["encoder"]) == ["t", "gru"]
    assert len(top_k(agg, 1)) == 1
    with pytest.raises(ConfigError):
        top_k(agg, 0)


def test_mini_sweep(waves):
    """2 cells x 2 seeds gives 4 rows in cell-then-seed order, and 2 aggregated cells with a std."""
    grid = SweepGrid(encoders=["gru", "sa-t"], decoders=["mlp"], layer_counts=[1], lrs=[1e-2])
    runs = sweep(waves, _template(), grid)
    assert list(runs.columns) == RUN_COLUMNS
    assert list(zip(runs["encoder"], runs["seed"])) == [("gru", 0), ("gru", 1), ("sa-t", 0), ("sa-t", 1)]
    assert (runs["error"] == "").all()
    agg = aggregate(runs)
    assert len(agg) == 2
    assert (agg["test_mse_std"] > 0).all()
    assert (agg["n_ok"] == 2).all()


def test_sweep_seed_count(waves):
    grid = SweepGrid(encoders=["gru"], decoders=["mlp"], layer_counts=[1], lrs=[1e-2])
    runs = sweep(waves, _template(), grid, seeds=[0, 1, 2, 3, 4])
    assert list(runs["seed"]) == [0, 1, 2, 3, 4]
    assert aggregate(runs)["n_runs"].tolist() == [5]


def test_threads_match_sequential(waves):
    """Running on a thread pool does not change any result."""
    grid = SweepGrid(encoders=["gru", "t"], decoders=["mlp", "cnn"], layer_counts=[1], lrs=[1e-2])
    sequential = sweep(waves, _template(), grid, jobs=1)
    threaded = sweep(waves, _template(), grid, jobs=3)
    pd.testing.assert_frame_equal(sequential.drop(columns="wall_s"), threaded.drop(columns="wall_s"))


def test_failed_cells_are_recorded(waves):
    """cnn cannot decode ROM coefficients; those runs fail without stopping the sweep."""
    grid = SweepGrid(encoders=["gru"], decoders=["mlp", "cnn"], layer_counts=[1], lrs=[1e-2])
    runs = sweep(waves, _template(), grid, seeds=[0], data=DataConfig(rom_rank=2))
    mlp, cnn = runs.iloc[0], runs.iloc[1]
    assert mlp["error"] == "" and np.isfinite(mlp["test_mse"])
    assert cnn["error"].startswith("ConfigError:")
    assert math.isnan(cnn["test_mse"])


def test_unexpected_exception_is_recorded(waves, monkeypatch):
    """A non-library error in one cell (e.g. from numpy) fails that cell only."""
    real_train = sweep_module.train

    def flaky_train(splits, config, seed, **kwargs):
        if config.encoder.variant == "lstm":
            raise ValueError("matrix is singular")
        return real_train(splits, config, seed, **kwargs)

    monkeypatch.setattr(sweep_module, "train", flaky_train)
    grid = SweepGrid(encoders=["lstm", "gru"], decoders=["mlp"], layer_counts=[1], lrs=[1e-2])
    runs = sweep(waves, _template(), grid, seeds=[0], jobs=2)
    lstm, gru = runs.iloc[0], runs.iloc[1]
    assert lstm["error"] == "ValueError: matrix is singular"
    assert math.isnan(lstm["best_val"])
    assert gru["error"] == "" and np.isfinite(gru["test_mse"])
    assert aggregate(runs)["n_ok"].tolist() == [1, 0]


def test_write_results(waves, tmp_path):
    grid = SweepGrid(encoders=["gru"], decoders=["mlp"], layer_counts=[1, 2], lrs=[1e-2])
    runs = sweep(waves, _template(), grid, seeds=[0], checkpoint_dir=tmp_path / "ckpt")
    paths = write_results(runs, tmp_path / "out", k=12)
    assert sorted(p.name for p in paths.values()) == ["aggregate.csv", "runs.csv", "top12.csv"]
    assert list(pd.read_csv(paths["runs"]).columns) == RUN_COLUMNS
    assert len(pd.read_csv(paths["top"])) == 2
    assert (tmp_path / "ckpt" / "gru+mlp_L2_lr0.01" / "seed0.ckpt").exists()


def test_bad_jobs(waves):
    with pytest.raises(ConfigError):
        sweep(waves, _template(), SweepGrid(), jobs=0)


if __name__ == "__main__":
    pytest.main(["-v", __file__])
