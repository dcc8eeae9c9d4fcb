import json

import pandas as pd
import pytest

import main
from crowding_core.config import config_digest
from crowding_core.reports import MANIFEST_FILE


@pytest.fixture
def quick_config(tmp_path):
    path = tmp_path / "quick.json"
    path.write_text(json.dumps({
        "_comment": "short chains for command tests",
        "mcmc": {"iterations": 1500, "burn_in": 300, "thin": 3},
        "montecarlo": {"n_runs": 2, "sigmas": [5.0]},
    }))
    return path


def _manifest(out):
    return json.loads((out / MANIFEST_FILE).read_text())


def test_tf2_table(tmp_path):
    assert main.dispatch(["tf2", "--counts", "0,50,100,150", "--out", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "tf2.csv")
    assert list(table.columns) == ["frequency_hz", "count_0", "count_50", "count_100", "count_150"]
    first = table.iloc[0]
    assert first.frequency_hz == 0.0
    for column in table.columns[1:]:
        assert first[column] == pytest.approx(1.0)
    assert (tmp_path / "tf2_complex_count_50.csv").exists()


def test_manifest_lists_outputs(tmp_path):
    assert main.dispatch(["track", "--out", str(tmp_path)]) == 0
    manifest = _manifest(tmp_path)
    assert manifest["subcommand"] == "track"
    assert manifest["master_seed"] is None
    assert manifest["outputs"] == ["track_psd.csv"]
    assert manifest["config_sha256"] == config_digest()
    assert manifest["version"] == main.__version__


def test_modes_table(tmp_path):
    assert main.dispatch(["modes", "--counts", "0,100", "--out", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "modes.csv")
    n_modes = main.CONFIG.multi_dof.n_flexible_modes
    assert len(table) == 2 * n_modes
    assert table["mode"].tolist()[:n_modes] == list(range(3, 3 + n_modes))
    loaded = table[table["count"] == 100]["frequency_hz"].to_numpy()
    empty = table[table["count"] == 0]["frequency_hz"].to_numpy()
    assert (loaded < empty).all()


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert main.dispatch(["track", "--config", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_invalid_config_names_field(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"apc": {"noise_sigma": -1}}))
    assert main.dispatch(["simulate", "--config", str(path), "--seed", "1", "--out", str(tmp_path)]) == 1
    assert "apc.noise_sigma" in capsys.readouterr().err


def test_unknown_subcommand():
    assert main.dispatch(["fly"]) == 2


def test_seed_required_for_stochastic_commands(tmp_path, capsys):
    assert main.dispatch(["simulate", "--out", str(tmp_path)]) == 1
    assert "seed" in capsys.readouterr().err


def test_simulate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main.dispatch(["simulate", "--seed", "42", "--out", str(a)]) == 0
    assert main.dispatch(["simulate", "--seed", "42", "--out", str(b)]) == 0
    for name in ("simrun.csv", "odm.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert _manifest(a)["master_seed"] == 42


def test_estimate_from_exported_run(tmp_path, quick_config):
    sim, est = tmp_path / "sim", tmp_path / "est"
    assert main.dispatch(["simulate", "--seed", "7", "--out", str(sim)]) == 0
    args = ["estimate", "--config", str(quick_config), "--seed", "7", "--simrun", str(sim), "--out", str(est)]
    assert main.dispatch(args) == 0
    posterior = pd.read_csv(est / "posterior.csv")
    assert list(posterior.columns) == ["car", "station", "omega_hat", "omega_lo", "omega_hi", "omega_true"]
    assert len(posterior) == 6 * 4
    assert (posterior["omega_lo"] <= posterior["omega_hat"]).all()
    assert (posterior["omega_hat"] <= posterior["omega_hi"]).all()
    summary = json.loads((est / "posterior_summary.json").read_text())
    assert sorted(summary["stations"]) == ["2", "3", "4", "5"]
    assert all(0 < ess <= 400 for ess in summary["stations"]["3"]["effective_sample_sizes"])

    direct = tmp_path / "direct"
    args = ["estimate", "--config", str(quick_config), "--seed", "7", "--out", str(direct)]
    assert main.dispatch(args) == 0
    assert (direct / "posterior.csv").read_bytes() == (est / "posterior.csv").read_bytes()


def test_estimate_station_out_of_range(tmp_path, quick_config):
    args = ["estimate", "--config", str(quick_config), "--seed", "1", "--station", "5", "--out", str(tmp_path)]
    assert main.dispatch(args) == 1


def test_mc_is_byte_identical(tmp_path, quick_config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main.dispatch(["mc", "--config", str(quick_config), "--seed", "42", "--out", str(out)]) == 0
    for name in ("metrics.json", "sigma_5/pairwise.csv", "sigma_5/box_summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = _manifest(a)
    assert manifest["outputs"] == ["metrics.json", "sigma_5/box_summary.csv", "sigma_5/pairwise.csv"]
    assert manifest["config_sha256"] == config_digest(quick_config)
    metrics = json.loads((a / "metrics.json").read_text())
    assert metrics["n_runs"] == 2


def test_mc_overrides(tmp_path, quick_config):
    args = ["mc", "--config", str(quick_config), "--seed", "3", "--runs", "1", "--sigma", "5,10", "--out", str(tmp_path)]
    assert main.dispatch(args) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["n_runs"] == 1
    assert metrics["sigmas"] == ["5", "10"]
    assert (tmp_path / "sigma_10" / "pairwise.csv").exists()


def test_mc_lookahead(tmp_path, quick_config):
    args = [
        "mc", "--config", str(quick_config), "--seed", "3", "--runs", "1",
        "--lookahead", "4", "--out", str(tmp_path),
    ]
    assert main.dispatch(args) == 0
    table = pd.read_csv(tmp_path / "lookahead.csv")
    assert list(table.columns) == ["run", "sigma", "through", "car", "abs_error"]
    assert sorted(table["through"].unique().tolist()) == [0, 1, 2, 3]
    assert len(table) == 4 * 6
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["lookahead"]["target"] == 4
    assert sorted(metrics["lookahead"]["mean_abs_error"]["5"]) == ["0", "1", "2", "3"]
    assert "lookahead.csv" in _manifest(tmp_path)["outputs"]


def test_mc_lookahead_station_checked(tmp_path, quick_config):
    args = ["mc", "--config", str(quick_config), "--seed", "3", "--lookahead", "5", "--out", str(tmp_path)]
    assert main.dispatch(args) == 1


def test_psd_then_estimate_load(tmp_path):
    psd = tmp_path / "psd"
    assert main.dispatch(["psd", "--counts", "60", "--no-delays", "--out", str(psd)]) == 0
    peaks = pd.read_csv(psd / "psd_peaks.csv")
    assert len(peaks) == 2

    fit = tmp_path / "fit"
    args = [
        "estimate-load", "--observed", str(psd / "psd_count_60.csv"), "--no-delays",
        "--counts", "0,20,40,60,80,100", "--out", str(fit),
    ]
    assert main.dispatch(args) == 0
    assert json.loads((fit / "load_estimate.json").read_text())["count"] == 60
    assert len(pd.read_csv(fit / "load_estimate.csv")) == 6


def test_estimate_load_missing_file(tmp_path, capsys):
    args = ["estimate-load", "--observed", str(tmp_path / "none.csv"), "--out", str(tmp_path)]
    assert main.dispatch(args) == 1
    assert "none.csv" in capsys.readouterr().err
