"""
End-to-end tests of the shredlab commands through main().
"""

import json
import struct

import numpy as np
import pandas as pd
import pytest
import yaml

from shredlab.artifacts import read_manifest, read_metrics
from shredlab.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from shredlab.encoders import EncoderConfig
from shredlab.fields import field_checksum, load_field, save_field
from shredlab.model import ModelConfig, ShredModel
from shredlab.sindy import LibrarySpec
from shredlab.synthetic import gen_synthetic

TINY_RUN = {
    "train": {
        "k_lag": 5,
        "n_sensors": 3,
        "n_epochs": 3,
        "batch_size": 16,
        "seeds": [0],
        "encoder": {"variant": "gru", "d_model": 4, "n_heads": 2, "d_ff": 4},
        "decoder": {"hidden_width": 8},
    },
}


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "waves.stf"
    save_field(gen_synthetic("traveling_waves", [4, 4], 60, seed=0), path)
    return path


def _write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def _last_json(out):
    return json.loads(out.strip().splitlines()[-1])


def test_generate(tmp_path, capsys):
    """The STF1 file holds prefix, header, bit-packed mask and float32 payload; reruns are identical."""
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "traveling_waves", "grid_dims": [8, 8], "n_time": 40, "seed": 3}))
    first, second = tmp_path / "a.stf", tmp_path / "b.stf"

    assert main(["generate", "--config", str(spec), "--out", str(first)]) == EXIT_OK
    out = capsys.readouterr().out
    assert main(["generate", "--config", str(spec), "--out", str(second)]) == EXIT_OK

    data = first.read_bytes()
    (header_len,) = struct.unpack_from("<I", data, 4)
    assert data[:4] == b"STF1"
    assert len(data) == 8 + header_len + 8 + 40 * 64 * 4
    assert data == second.read_bytes()

    fld = load_field(first)
    assert (fld.grid_dims, fld.n_time, fld.n_valid) == ([8, 8], 40, 64)
    assert f"sha256 {field_checksum(fld)}" in out


def test_generate_errors(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "vortex", "grid_dims": [8, 8], "n_time": 10}))
    assert main(["generate", "--config", str(spec), "--out", str(tmp_path / "x.stf")]) == EXIT_CONFIG
    assert "unknown synthetic kind" in capsys.readouterr().err

    spec.write_text(json.dumps({"kind": "traveling_waves", "n_steps": 10}))
    assert main(["generate", "--config", str(spec), "--out", str(tmp_path / "x.stf")]) == EXIT_CONFIG
    assert "n_steps" in capsys.readouterr().err
    assert not (tmp_path / "x.stf").exists()


def test_train_writes_run_directory(tmp_path, dataset, capsys):
    run = _write_yaml(tmp_path / "run.yaml", {**TINY_RUN, "out_dir": str(tmp_path / "runs")})
    assert main(["train", "--preset", "smoke", "--config", str(run), "--dataset", str(dataset)]) == EXIT_OK
    printed = _last_json(capsys.readouterr().out)

    run_dir = tmp_path / "runs" / "seed0"
    assert printed["run_dir"] == str(run_dir)
    for name in ("manifest.json", "config.json", "losses.csv", "model.ckpt", "metrics.json"):
        assert (run_dir / name).exists(), name
    assert not (run_dir / "odes.txt").exists()

    manifest = read_manifest(run_dir)
    assert (manifest.command, manifest.seed, manifest.precision) == ("train", 0, "f64")
    assert manifest.dataset_checksum == field_checksum(load_field(dataset))
    assert manifest.config["train"]["encoder"]["d_model"] == 4

    metrics = read_metrics(run_dir)
    assert metrics.test_mse == printed["test_mse"]
    assert metrics.checkpoint_bytes == (run_dir / "model.ckpt").stat().st_size
    losses = pd.read_csv(run_dir / "losses.csv")
    assert list(losses.columns) == ["epoch", "train_loss", "val_loss", "n_pruned"]
    assert len(losses) == 3


def test_train_replays_from_config_json(tmp_path, dataset):
    """Training again from a run's config.json reproduces its metrics."""
    run = _write_yaml(tmp_path / "run.yaml", {**TINY_RUN, "out_dir": str(tmp_path / "runs")})
    assert main(["train", "--preset", "smoke", "--config", str(run), "--dataset", str(dataset)]) == EXIT_OK
    snapshot = tmp_path / "runs" / "seed0" / "config.json"
    assert main(["train", "--config", str(snapshot), "--out-dir", str(tmp_path / "replay")]) == EXIT_OK
    assert read_metrics(tmp_path / "replay" / "seed0") == read_metrics(tmp_path / "runs" / "seed0")


def test_eval_matches_training_metrics(tmp_path, dataset, capsys):
    run = _write_yaml(tmp_path / "run.yaml", {**TINY_RUN, "out_dir": str(tmp_path / "runs")})
    assert main(["train", "--config", str(run), "--dataset", str(dataset)]) == EXIT_OK
    capsys.readouterr()

    run_dir = tmp_path / "runs" / "seed0"
    assert main(["eval", "--checkpoint", str(run_dir), "--out", str(tmp_path / "eval.json")]) == EXIT_OK
    result = _last_json(capsys.readouterr().out)
    assert result["split"] == "test"
    assert result["mse"] == pytest.approx(read_metrics(run_dir).test_mse, rel=1e-12)
    assert json.loads((tmp_path / "eval.json").read_text()) == result


def test_train_config_errors(tmp_path, dataset, capsys):
    assert main(["train", "--preset", "smoke"]) == EXIT_CONFIG
    assert "--dataset is required" in capsys.readouterr().err

    assert main(["train", "--preset", "smoke", "--dataset", str(tmp_path / "missing.stf")]) == EXIT_CONFIG
    assert main(["train", "--preset", "huge", "--dataset", str(dataset)]) == EXIT_CONFIG
    assert "unknown preset" in capsys.readouterr().err

    typo = _write_yaml(tmp_path / "typo.yaml", {"train": {"n_epoch": 3}})
    assert main(["train", "--config", str(typo), "--dataset", str(dataset)]) == EXIT_CONFIG
    assert "train.n_epoch" in capsys.readouterr().err

    bad = tmp_path / "bad.stf"
    bad.write_bytes(b"NOPE" + dataset.read_bytes()[4:])
    assert main(["train", "--preset", "smoke", "--dataset", str(bad)]) == EXIT_CONFIG


def test_train_divergence_exit_code(tmp_path, dataset, capsys):
    diverging = {"train": {**TINY_RUN["train"], "optimizer": "sgd", "lr": 1e200},
                 "out_dir": str(tmp_path / "runs")}
    run = _write_yaml(tmp_path / "run.yaml", diverging)
    with np.errstate(all="ignore"):
        assert main(["train", "--config", str(run), "--dataset", str(dataset)]) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def _sindy_checkpoint(path):
    encoder = EncoderConfig(variant="transformer_sindy", n_layers=1, d_model=6, n_heads=2, d_ff=6,
                            sindy_library=LibrarySpec(include_bias=False, poly_order=1))
    model = ShredModel(ModelConfig(encoder=encoder, n_sensors=3, n_state=16))
    xi = model.store["encoder.layer0.xi"].value
    xi[...] = 0.0
    xi[0, 0, 0] = -0.699
    xi[0, 2, 0] = 0.275
    return model.save(path)


def test_extract(tmp_path, capsys):
    checkpoint = _sindy_checkpoint(tmp_path / "run" / "model.ckpt")
    assert main(["extract", "--checkpoint", str(checkpoint)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[:5] == ["L₀:", "  H₀:", "    ż₀ = -0.699·z₀ + 0.275·z₂", "    ż₁ = 0", "    ż₂ = 0"]
    assert "  H₁:" in lines

    text = (tmp_path / "run" / "odes.txt").read_text(encoding="utf-8")
    assert text == "\n".join(lines) + "\n"
    odes = json.loads((tmp_path / "run" / "odes.json").read_text(encoding="utf-8"))
    assert len(odes["blocks"]) == 2


def test_extract_rejects_recurrent_model(tmp_path, capsys):
    checkpoint = ShredModel(ModelConfig(n_sensors=3, n_state=10)).save(tmp_path / "model.ckpt")
    assert main(["extract", "--checkpoint", str(checkpoint)]) == EXIT_CONFIG
    assert "gru" in capsys.readouterr().err
    assert not (tmp_path / "odes.txt").exists()


def test_sweep(tmp_path, dataset, capsys):
    """Two cells and two seeds give four rows and two aggregated cells."""
    config = {**TINY_RUN, "out_dir": str(tmp_path / "sweep"),
              "grid": {"encoders": ["gru", "t"], "decoders": ["mlp"], "layer_counts": [1], "lrs": [0.01]}}
    config["train"] = {**TINY_RUN["train"], "seeds": [0, 1]}
    sweep_file = _write_yaml(tmp_path / "sweep.yaml", config)
    assert main(["sweep", "--preset", "smoke", "--config", str(sweep_file), "--dataset", str(dataset)]) == EXIT_OK
    assert "4/4 runs succeeded" in capsys.readouterr().out

    out = tmp_path / "sweep"
    runs = pd.read_csv(out / "runs.csv", keep_default_na=False)
    assert list(zip(runs["encoder"], runs["seed"])) == [("gru", 0), ("gru", 1), ("t", 0), ("t", 1)]
    assert len(pd.read_csv(out / "aggregate.csv")) == 2
    assert len(pd.read_csv(out / "top12.csv")) == 2
    assert read_manifest(out).command == "sweep"


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert capsys.readouterr().out.startswith("shredlab ")


if __name__ == "__main__":
    pytest.main(["-v", __file__])
