import math

import numpy as np
import pytest
import yaml

from accflow import io
from accflow.cli import main

SMALL = {
    "grid": {"dx": 0.125},
    "T": 1.0,
    "vehicles": {"N": 100, "N_list": [50, 100]},
    "montecarlo": {"runs": 2, "dx_list": [0.25, 0.125], "rate_N": 100, "series_every": 40},
    "record_every": 20,
    "bounds_check": {"N_list": [100, 400]},
}


def write_cfg(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_validate_defaults(capsys):
    assert main(["validate"]) == 0
    assert capsys.readouterr().out.startswith("ok: 16000 steps")


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"grid": {"dxx": 1}})
    assert main(["validate", "--config", cfg]) == 1
    assert "grid.dxx" in capsys.readouterr().err


def test_micro_without_accidents_is_deterministic(tmp_path):
    raw = {**SMALL, "accidents": {"lambda_F": 0.0, "lambda_D": 0.0}}
    cfg = write_cfg(tmp_path, raw)
    assert main(["simulate", "--model", "micro", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--model", "micro", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "b")]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    rows = io.read_csv(tmp_path / "a" / "trajectory.csv", "trajectory")
    assert len(rows) == 100 * 5
    assert io.read_csv(tmp_path / "a" / "accidents.csv", "accidents") == []
    # positions are wrapped to the road, so the id order is cyclic with at most one wrap
    last = np.array([r[2] for r in rows[-100:]])
    assert np.sum(np.diff(last) <= 0) <= 1


def test_macro_constant_state_stays_constant(tmp_path):
    raw = {**SMALL, "road": {"base_factor": 1.0, "segments": []}, "accidents": {"lambda_F": 0.0, "lambda_D": 0.0}}
    cfg = write_cfg(tmp_path, raw)
    assert main(["simulate", "--model", "macro", "--config", cfg, "--out", str(tmp_path)]) == 0
    rho = np.array([r[2] for r in io.read_csv(tmp_path / "density.csv", "density")])
    assert len(rho) == 160 * 5
    assert np.max(np.abs(rho - 0.4)) <= 1e-15


def test_coupled_log_matches_macro_and_repeats_bytewise(tmp_path):
    raw = {**SMALL, "accidents": {"lambda_F": 0.5, "lambda_D": 0.5}}
    cfg = write_cfg(tmp_path, raw)
    for d in ("m", "c1", "c2"):
        model = "macro" if d == "m" else "coupled"
        assert main(["simulate", "--model", model, "--config", cfg, "--seed", "4", "--out", str(tmp_path / d)]) == 0
    macro_log = (tmp_path / "m" / "accidents.csv").read_bytes()
    assert macro_log.count(b"\n") > 1
    assert (tmp_path / "c1" / "accidents.csv").read_bytes() == macro_log
    assert files(tmp_path / "c1") == files(tmp_path / "c2")
    assert set(files(tmp_path / "c1")) == {"accidents.csv", "density.csv", "joint.csv", "trajectory.csv"}
    joint = io.read_csv(tmp_path / "c1" / "joint.csv", "joint")
    assert len(joint) == 161 * 5


def test_converge_smoke(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["converge", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    rep = io.read_csv(tmp_path / "a" / "report.csv", "report")
    assert [r[0] for r in rep] == [50, 100]
    assert all(math.isfinite(v) for r in rep for v in r[2:])
    assert all(r[4] >= r[2] - 1e-12 and r[5] >= r[3] - 1e-12 for r in rep)
    rates = io.read_csv(tmp_path / "a" / "rates.csv", "rates")
    assert [r[1] for r in rates] == ["err1", "err2", "err3", "err4"]
    series = io.read_csv(tmp_path / "a" / "series_N100.csv", "series")
    assert [r[0] for r in series] == [0.0, 0.5, 1.0]
    assert main(["converge", "--config", cfg, "--workers", "2", "--out", str(tmp_path / "b")]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_bounds_check(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["bounds-check", "--config", cfg, "--out", str(tmp_path / "ok")]) == 0
    assert {"bounds.json", "bounds_N100.json", "bounds_N400.json"} <= set(files(tmp_path / "ok"))
    bad = write_cfg(tmp_path, {**SMALL, "bounds_check": {"N_list": [400], "dt_factor": 20.0}}, "bad.yaml")
    assert main(["bounds-check", "--config", bad, "--out", str(tmp_path / "bad")]) == 2


def test_parser_rejects_unknown_model():
    with pytest.raises(SystemExit):
        main(["simulate", "--model", "mesoscopic"])
