import json

import numpy as np
import pytest

from accflow import io
from accflow.events import AccidentEvent, EventLog


def test_csv_round_trip_is_exact(tmp_path):
    rows = [(1 / 3, 2, np.nextafter(0.1, 1.0)), (1e-300, 0, -7.25)]
    p = io.write_csv(tmp_path / "t.csv", "trajectory", rows)
    assert io.read_csv(p, "trajectory") == [(1 / 3, 2, float(np.nextafter(0.1, 1.0))), (1e-300, 0, -7.25)]
    assert p.read_bytes().startswith(b"t,vehicle_index,position\n")


def test_header_mismatch_rejected(tmp_path):
    p = io.write_csv(tmp_path / "d.csv", "density", [(0.0, 0.5, 0.4)])
    with pytest.raises(ValueError):
        io.read_csv(p, "trajectory")


def test_row_width_checked(tmp_path):
    with pytest.raises(ValueError):
        io.write_csv(tmp_path / "x.csv", "rates", [(0.1, "err1")])


def test_accident_log(tmp_path):
    log = EventLog()
    log.append(AccidentEvent(0.25, "add", 1, 1.0, 0.5, 0.99))
    log.append(AccidentEvent(0.5, "remove", 1, 1.0, 0.5, 0.99))
    p = io.write_accident_log(tmp_path / "a.csv", log)
    assert io.read_csv(p, "accidents") == [(0.25, "add", 1, 1.0, 0.5, 0.99), (0.5, "remove", 1, 1.0, 0.5, 0.99)]


def test_trajectory_rows_follow_ids():
    rows = list(io.trajectory_rows([0.0], [(np.array([2, 0, 1]), np.array([3.0, 1.0, 2.0]))]))
    assert rows == [(0.0, 0, 1.0), (0.0, 1, 2.0), (0.0, 2, 3.0)]


def test_density_rows():
    rows = list(io.density_rows([0.0, 1.0], np.array([0.5, 1.5]), [np.array([0.1, 0.2]), np.array([0.3, 0.4])]))
    assert rows == [(0.0, 0.5, 0.1), (0.0, 1.5, 0.2), (1.0, 0.5, 0.3), (1.0, 1.5, 0.4)]


def test_json_handles_numpy(tmp_path):
    p = io.write_json(tmp_path / "r.json", {"a": np.float64(0.5), "b": np.arange(2), "n": np.int64(3)})
    assert p.read_text().count("\n") > 1
    assert json.loads(p.read_text()) == {"a": 0.5, "b": [0, 1], "n": 3}
