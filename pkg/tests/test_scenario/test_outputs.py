import json
import math
from types import SimpleNamespace

import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest

from tubechannel.cir import LargeScaleGain, RicianModel
from tubechannel.evolution import EvolutionParams
from tubechannel.geometry import TubeScene
from tubechannel.model import ChannelModel
from tubechannel.scenario import outputs
from tubechannel.scenario.runlog import RunLog, StepRecord
from tubechannel.statistics import PdpMatrix, empirical_ccdf

FOOTER = {"digest": "abcdef0123456789", "seed": 4}


def test_write_csv(tmp_path):
    path = outputs.write_csv(
        tmp_path / "nested" / "table.csv",
        ("a", "b", "c"),
        [(1, 0.1, True), (2, 1e-9, "x")],
        **FOOTER,
    )
    text = path.read_text()
    assert text == (
        "a,b,c\n1,0.1,true\n2,1e-09,x\n# config_digest=abcdef0123456789 seed=4\n"
    )
    header, rows, footer = outputs.read_csv(path)
    assert header == ["a", "b", "c"]
    assert rows == [["1", "0.1", "true"], ["2", "1e-09", "x"]]
    assert footer == {"config_digest": "abcdef0123456789", "seed": "4"}


def test_floats_round_trip(tmp_path):
    values = [1 / 3, np.float64(2.5e-7), np.float32(0.1), -0.0]
    path = outputs.write_csv(
        tmp_path / "t.csv", ("x",), [(v,) for v in values], **FOOTER
    )
    _, rows, _ = outputs.read_csv(path)
    assert [float(r[0]) for r in rows] == [float(v) for v in values]


def test_write_csv_is_deterministic(tmp_path):
    rows = [(i, i / 7) for i in range(20)]
    a = outputs.write_csv(tmp_path / "a.csv", ("i", "x"), rows, **FOOTER)
    b = outputs.write_csv(tmp_path / "b.csv", ("i", "x"), rows, **FOOTER)
    assert a.read_bytes() == b.read_bytes()


def test_write_csv_column_mismatch(tmp_path):
    with pytest.raises(ValueError, match="columns"):
        outputs.write_csv(tmp_path / "t.csv", ("a", "b"), [(1,)], **FOOTER)


def test_write_correlation(tmp_path):
    curves = [(0.0, [0.0, 1e-5], [1 + 0j, 0.5j]), (1e-3, [0.0, 1e-5], [1, -0.5])]
    path = outputs.write_correlation(tmp_path / "acf.csv", "acf", curves, **FOOTER)
    header, rows, _ = outputs.read_csv(path)
    assert header == ["t_s", "dt_s", "re", "im", "abs"]
    assert len(rows) == 4
    assert [float(x) for x in rows[1]] == [0.0, 1e-5, 0.0, 0.5, 0.5]
    assert float(rows[3][0]) == 1e-3

    with pytest.raises(ValueError, match="kind"):
        outputs.write_correlation(tmp_path / "x.csv", "pcf", curves, **FOOTER)


def test_write_pdp(tmp_path):
    matrix = PdpMatrix(
        times=jnp.array([0.0, 1e-5]),
        delay_bins=jnp.array([0.0, 5e-9, 1e-8]),
        power=jnp.array([[0.1, 0.2, 0.0], [0.0, 0.3, 0.4]]),
    )
    header, rows, _ = outputs.read_csv(
        outputs.write_pdp(tmp_path / "pdp.csv", matrix, **FOOTER)
    )
    assert header == ["t_s", "tau_s", "power"]
    assert len(rows) == 6
    assert [float(x) for x in rows[5]] == pytest.approx([1e-5, 1e-8, 0.4])


def test_write_si_ccdf(tmp_path):
    series = empirical_ccdf([3e-4, 1e-4, 2e-4])
    header, rows, _ = outputs.read_csv(
        outputs.write_si_ccdf(tmp_path / "si.csv", series, **FOOTER)
    )
    assert header == ["interval_s", "ccdf"]
    values = [float(r[0]) for r in rows]
    assert values == sorted(values)
    assert float(rows[-1][1]) == 0


def test_write_clusters(tmp_path):
    series = SimpleNamespace(
        times=np.array([0.0, 1e-5]),
        distance=np.array([600.0, 599.997]),
        mean=np.array([20.5, 21.0]),
    )
    header, rows, _ = outputs.read_csv(
        outputs.write_clusters(tmp_path / "clusters.csv", series, **FOOTER)
    )
    assert header == ["t_s", "distance_m", "count"]
    assert rows[0] == ["0.0", "600.0", "20.5"]


def test_write_runlog(tmp_path):
    logs = []
    for realization in (0, 1):
        log = RunLog(realization)
        log.append(StepRecord(0.0, 600.0, 3, (0, 1, 2), (), (), "f" * 16))
        logs.append(log)
    header, rows, _ = outputs.read_csv(
        outputs.write_runlog(tmp_path / "runlog.csv", logs, **FOOTER)
    )
    assert header == ["realization", "t_s", "distance_m", "count", "digest"]
    assert rows == [
        ["0", "0.0", "600.0", "3", "f" * 16],
        ["1", "0.0", "600.0", "3", "f" * 16],
    ]


def test_write_table(tmp_path):
    path = outputs.write_table(
        tmp_path / "cmp.csv",
        "t_s",
        {"count_tube": [1, 2], "count_tunnel": [3, 4]},
        [0.0, 1e-5],
        **FOOTER,
    )
    header, rows, _ = outputs.read_csv(path)
    assert header == ["t_s", "count_tube", "count_tunnel"]
    assert rows[1] == ["1e-05", "2", "4"]
    with pytest.raises(ValueError, match="count_tube"):
        outputs.write_table(
            tmp_path / "bad.csv", "t", {"count_tube": [1]}, [0, 1], **FOOTER
        )


@pytest.fixture(scope="module")
def snapshot():
    model = ChannelModel(
        TubeScene(),
        jnp.array([-300.0, 0.0, 0.0]),
        58e9,
        EvolutionParams(),
        RicianModel(),
        capacity=32,
        max_rays=8,
    )
    return model.snapshot(model.initial_state(jr.key(1)), 0.0)


def test_snapshot_document(tmp_path, snapshot):
    gain = LargeScaleGain(123.4, 1.5)
    document = outputs.snapshot_document(snapshot, gain=gain, meta={"seed": 4})
    assert len(document["pairs"]) == 4
    assert document["pairs"][1] == {
        "p": 0,
        "q": 1,
        "components": document["pairs"][1]["components"],
    }
    first = document["pairs"][0]["components"][0]
    assert first["kind"] == "los"
    assert first["cluster_id"] is None
    powers = [c["power"] for c in document["pairs"][0]["components"]]
    assert math.fsum(powers) == pytest.approx(1, abs=1e-9)
    assert document["gain_db"]["total"] == pytest.approx(124.9)
    assert document["meta"] == {"seed": 4}

    path = outputs.write_json(tmp_path / "snapshot.json", document)
    assert json.loads(path.read_text()) == document
    again = outputs.write_json(tmp_path / "again.json", document)
    assert path.read_bytes() == again.read_bytes()


def test_snapshot_document_without_gain(snapshot):
    document = outputs.snapshot_document(snapshot)
    assert "gain_db" not in document
    assert document["meta"] == {}
    assert document["time_s"] == 0.0


def test_non_finite_gain_is_text(snapshot):
    document = outputs.snapshot_document(snapshot, gain=LargeScaleGain(math.inf))
    assert document["gain_db"]["pl"] == "inf"
    assert document["gain_db"]["total"] == "inf"
