import json

import pytest
from typer.testing import CliRunner

from tubechannel.cli import app
from tubechannel.scenario import load_config
from tubechannel.scenario.outputs import read_csv

runner = CliRunner()

SETTINGS = [
    "sim.steps=4",
    "evolution.max_clusters=48",
    "evolution.max_rays=8",
    "stats.freq_points=8",
    "stats.ccf_points=5",
    "stats.delay_bins=64",
    "track.length_m=20",
]


def _arguments(command, out, *extra, preset="tube"):
    arguments = [command, "--out", str(out), "--no-progress"]
    if preset is not None:
        arguments += ["--preset", preset]
    for setting in SETTINGS:
        arguments += ["--set", setting]
    return [*arguments, *extra]


def _invoke(*arguments, **kwargs):
    return runner.invoke(app, _arguments(*arguments, **kwargs))


def test_run(tmp_path):
    result = _invoke("run", tmp_path, "--realizations", "2")
    assert result.exit_code == 0, result.output
    assert {p.name for p in tmp_path.iterdir()} == {
        "config.txt",
        "clusters.csv",
        "snapshot.json",
    }

    expected = load_config(
        preset="tube", overrides=[*SETTINGS, "sim.realizations=2"]
    )
    header, rows, footer = read_csv(tmp_path / "clusters.csv")
    assert header == ["t_s", "distance_m", "count"]
    assert len(rows) == 5
    assert footer == {"config_digest": expected.digest, "seed": "0"}
    assert load_config((tmp_path / "config.txt").read_text()) == expected

    document = json.loads((tmp_path / "snapshot.json").read_text())
    assert len(document["pairs"]) == 4
    assert document["meta"]["config_digest"] == expected.digest
    assert document["meta"]["gain_applied"] is False
    assert document["gain_db"]["pl"] > 0


def test_run_is_deterministic(tmp_path):
    for name in ("a", "b"):
        result = _invoke("run", tmp_path / name, "--seed", "3", "--runlog")
        assert result.exit_code == 0, result.output
    for name in ("clusters.csv", "snapshot.json", "runlog.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (
            tmp_path / "b" / name
        ).read_bytes()


def test_run_outputs_depend_on_seed(tmp_path):
    for seed in ("1", "2"):
        result = _invoke("run", tmp_path / seed, "--seed", seed)
        assert result.exit_code == 0, result.output
    first = (tmp_path / "1" / "snapshot.json").read_text()
    second = (tmp_path / "2" / "snapshot.json").read_text()
    assert first != second


def test_overrides_change_digest(tmp_path):
    _invoke("run", tmp_path / "slow")
    _invoke("run", tmp_path / "fast", "--set", "v_kmh=2160")
    slow = read_csv(tmp_path / "slow" / "clusters.csv")[2]
    fast = read_csv(tmp_path / "fast" / "clusters.csv")[2]
    assert slow["config_digest"] != fast["config_digest"]


def test_runlog_and_instants(tmp_path):
    result = _invoke(
        "run", tmp_path, "--runlog", "--realizations", "2", "--instants", "0,2e-5"
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "snapshot_0.json").exists()
    assert (tmp_path / "snapshot_2.json").exists()
    header, rows, _ = read_csv(tmp_path / "runlog.csv")
    assert header == ["realization", "t_s", "distance_m", "count", "digest"]
    assert len(rows) == 2 * 5
    assert [row[0] for row in rows[:5]] == ["0"] * 5


def test_environment_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv("TUBECHANNEL_OUT", str(tmp_path / "env"))
    arguments = ["run", "--preset", "tube", "--no-progress"]
    for setting in SETTINGS:
        arguments += ["--set", setting]
    result = runner.invoke(app, arguments)
    assert result.exit_code == 0, result.output
    assert (tmp_path / "env" / "clusters.csv").exists()


def test_stats(tmp_path):
    result = _invoke("stats", tmp_path, "--realizations", "2", "--instants", "0,1e-5")
    assert result.exit_code == 0, result.output
    for name in ("acf", "ccf", "fcf", "pdp", "si_ccdf"):
        assert (tmp_path / f"{name}.csv").exists()

    header, rows, _ = read_csv(tmp_path / "acf.csv")
    assert header == ["t_s", "dt_s", "re", "im", "abs"]
    first = [r for r in rows if float(r[0]) == 0.0]
    assert len(first) == 5
    assert float(first[0][4]) == pytest.approx(1)

    header, rows, _ = read_csv(tmp_path / "ccf.csv")
    assert header[1] == "delta_over_lambda"
    assert float(rows[4][1]) == pytest.approx(3.0)

    _, rows, _ = read_csv(tmp_path / "pdp.csv")
    assert len(rows) == 2 * 64

    _, rows, _ = read_csv(tmp_path / "si_ccdf.csv")
    assert len(rows) == 2 * 2


def test_stats_ensemble(tmp_path):
    result = _invoke(
        "stats",
        tmp_path,
        "--realizations",
        "3",
        "--set",
        "stats.estimator=ensemble",
    )
    assert result.exit_code == 0, result.output
    _, rows, _ = read_csv(tmp_path / "fcf.csv")
    assert float(rows[0][4]) == pytest.approx(1)


def test_ensemble_needs_two_realizations(tmp_path):
    result = _invoke("stats", tmp_path, "--set", "stats.estimator=ensemble")
    assert result.exit_code == 1
    assert "sim.realizations" in result.output


def test_compare(tmp_path):
    result = _invoke("compare", tmp_path, preset=None)
    assert result.exit_code == 0, result.output

    header, rows, _ = read_csv(tmp_path / "clusters_compare.csv")
    assert header == [
        "t_s",
        "distance_m",
        "count_tube",
        "count_tunnel",
        "count_open-hst-approx",
    ]
    assert len(rows) == 5

    header, rows, _ = read_csv(tmp_path / "clusters_track_compare.csv")
    assert header[0] == "distance_m"
    assert float(rows[0][0]) == pytest.approx((1000**2 + 1) ** 0.5)

    header, _, _ = read_csv(tmp_path / "si_ccdf_compare.csv")
    assert header[0] == "interval_s"
    for name in ("tube", "tunnel", "open-hst-approx"):
        assert (tmp_path / name / "config.txt").exists()


def test_compare_is_deterministic(tmp_path):
    trees = []
    for name in ("a", "b"):
        result = _invoke("compare", tmp_path / name, "--seed", "7", preset=None)
        assert result.exit_code == 0, result.output
        root = tmp_path / name
        files = sorted(p for p in root.rglob("*") if p.is_file())
        trees.append({p.relative_to(root): p.read_bytes() for p in files})
    assert trees[0] == trees[1]
    assert len(trees[0]) >= 6


def test_sweep(tmp_path):
    result = _invoke("sweep", tmp_path, "--key", "v_kmh", "--values", "540,2160")
    assert result.exit_code == 0, result.output
    header, rows, footer = read_csv(tmp_path / "sweep_si.csv")
    assert header == [
        "value",
        "median_interval_s",
        "mean_interval_s",
        "acf_crossing_s",
        "config_digest",
    ]
    assert [row[0] for row in rows] == ["540", "2160"]
    digests = [row[-1] for row in rows]
    assert all(len(d) == 16 for d in digests)
    assert len({*digests, footer["config_digest"]}) == 3
    _, rows, _ = read_csv(tmp_path / "sweep_acf.csv")
    assert len(rows) == 2 * 5


configuration_errors = {
    "unknown_preset": ["--preset", "maglev"],
    "unknown_key": ["--set", "motion.warp=3"],
    "bad_value": ["--set", "v_kmh=fast"],
    "off_grid_instant": ["--instants", "3e-6"],
    "instant_after_horizon": ["--instants", "1"],
    "missing_config": ["--config", "missing.txt"],
}


@pytest.mark.parametrize(
    "extra", configuration_errors.values(), ids=configuration_errors.keys()
)
def test_configuration_errors(tmp_path, extra):
    result = _invoke("run", tmp_path, *extra)
    assert result.exit_code == 1
    assert "Configuration error" in result.output


def test_unknown_preset_lists_presets(tmp_path):
    result = _invoke("run", tmp_path, preset="maglev")
    assert result.exit_code == 1
    assert "open-hst-approx, tube, tunnel" in result.output


def test_config_file_parse_error(tmp_path):
    path = tmp_path / "scenario.txt"
    path.write_text("preset = tube\nmotion.speed_kmh 540\n")
    result = _invoke("run", tmp_path / "out", "--config", str(path), preset=None)
    assert result.exit_code == 1
    assert "line 2" in result.output
