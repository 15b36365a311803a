import json

import numpy as np
import pytest

from vbident import cli, config, formats
from vbident.errors import ConfigError, DataError
from vbident.forecaster import build_forecaster
from vbident.sae import build_sae

TINY = {
    "schema_version": 1,
    "seed": 3,
    "ensemble": {"kind": "ac", "count": 6},
    "signals": {"synthetic_count": 2, "duration_s": 300.0},
    "simulation": {"baseline_horizon_s": 600.0},
    "sae": {"epochs": 5},
    "transfer": {"new_device_count": 8, "epochs": 5},
    "forecaster": {"window": 2, "units": 8, "stage1_epochs": 2, "stage2_epochs": 1},
    "identification": {"power_horizon_s": 300.0, "power_tol_kw": 5.0},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def test_vbds_round_trip(tmp_path, rng):
    m = rng.standard_normal((17, 5))
    formats.write_vbds(tmp_path / "m.vbds", m)
    np.testing.assert_array_equal(formats.read_vbds(tmp_path / "m.vbds"), m)


def test_vbds_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.vbds"
    bad.write_bytes(b"NOPE" + bytes(30))
    with pytest.raises(DataError):
        formats.read_vbds(bad)
    good = tmp_path / "t.vbds"
    formats.write_vbds(good, np.ones((3, 3)))
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(DataError, match="truncated"):
        formats.read_vbds(good)
    with pytest.raises(DataError):
        formats.read_vbds(tmp_path / "missing.vbds")


@pytest.mark.parametrize("make", [lambda: build_sae(13, seed=4), lambda: build_forecaster(3, seed=4)])
def test_vbnn_round_trip(tmp_path, rng, make):
    net = make()
    net.meta["note"] = "kept"
    formats.save_network(net, tmp_path / "n.vbnn")
    back = formats.load_network(tmp_path / "n.vbnn")
    assert back.meta["note"] == "kept"
    for (na, p), (nb, q) in zip(net.named_params(), back.named_params()):
        assert na == nb
        np.testing.assert_array_equal(p, q)
    x = rng.standard_normal((4,) + tuple(net.input_shape))
    np.testing.assert_array_equal(net.forward(x), back.forward(x))


def test_csv_matrix_round_trip(tmp_path, rng):
    m = rng.standard_normal((6, 3))
    formats.write_csv_matrix(tmp_path / "m.csv", m, header=["a", "b", "c"])
    np.testing.assert_array_equal(formats.read_csv_matrix(tmp_path / "m.csv"), m)


def test_config_defaults_and_overrides():
    cfg = config.load_config(None)
    assert cfg["ensemble"]["count"] == 20
    cfg = config.validate({"schema_version": 1, "sae": {"lr": 0.1}})
    assert cfg["sae"]["lr"] == 0.1 and cfg["sae"]["batch"] == 64


@pytest.mark.parametrize("raw", [
    {"schema_version": 1, "bogus": 1},
    {"schema_version": 1, "sae": {"learning_rate": 0.1}},
    {"schema_version": 2},
    {"schema_version": 1, "ensemble": {"kind": "fridge", "count": 3}},
    {"schema_version": 1, "transfer": {"new_device_count": 20}},
    {"schema_version": 1, "forecaster": {"extent": 4}},
])
def test_config_rejects(raw):
    with pytest.raises(ConfigError):
        config.validate(raw)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        config.load_config(tmp_path / "none.json")
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ConfigError):
        config.load_config(tmp_path / "x.json")


def test_shipped_config_is_valid():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "desk.json"
    assert config.load_config(path) == config.load_config(None)


def test_cli_exit_codes(tmp_path, tiny_config, capsys):
    run = tmp_path / "run"
    assert cli.main(["identify", "--out", str(run)]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1, "nope": 0}')
    assert cli.main(["simulate", "--config", str(bad), "--out", str(run)]) == 2
    assert cli.main(["simulate", "--config", str(tiny_config), "--out", str(run)]) == 0
    assert cli.main(["identify", "--out", str(run)]) == 3
    err = capsys.readouterr().err
    assert "sae.vbnn" in err


@pytest.mark.slow
def test_cli_full_pipeline(tmp_path, tiny_config, capsys):
    run = tmp_path / "run"
    for stage in ("simulate", "train-sae", "transfer", "train-forecaster", "identify", "report"):
        args = [stage, "--out", str(run)]
        if stage == "simulate":
            args += ["--config", str(tiny_config)]
        assert cli.main(args) == 0, stage
    phi = json.loads((run / "phi.json").read_text())
    assert phi["P_minus"] <= 0 <= phi["P_plus"]
    assert phi["C1"] <= phi["x0"] <= phi["C2"]
    for name in ("dataset.vbds", "sae.vbnn", "forecaster.vbnn", "transfer/report.json",
                 "report/summary.json", "report/reconstruction_histogram.csv"):
        assert (run / name).is_file(), name
