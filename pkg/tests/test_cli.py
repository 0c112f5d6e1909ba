import json
import subprocess
import sys

import numpy as np
import pytest

from synthop import cli


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "ds"
    assert cli.main(["simulate", "--scenario", "pendulum", "--seed", "0", "--out", str(out)]) == 0
    return out


def test_simulate_outputs(sim_dir):
    assert len(list(sim_dir.glob("*.csv"))) == 25
    man = json.loads((sim_dir / "run_manifest.json").read_text())
    assert man["command"] == "simulate"
    assert man["exit_code"] == 0
    assert man["seeds"]["seed"] == 0
    assert man["tool_version"]
    assert (sim_dir / "truth.json").exists()


def test_simulate_seed7_and_noise_free(tmp_path):
    assert cli.main(["simulate", "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert len(list((tmp_path / "a").glob("*.csv"))) == 25
    assert cli.main(["simulate", "--seed", "7", "--sigma", "0", "--K", "3", "--out", str(tmp_path / "b")]) == 0
    from synthop.signals import load_dataset
    ds = load_dataset(tmp_path / "b" / "dataset.json")
    assert ds.K == 3
    assert not any(tr.v is not None and np.any(tr.v) for tr in ds.trajectories)


def test_simulate_missing_scenario(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert cli.main(["simulate", "--scenario", str(missing), "--out", str(tmp_path / "x"),
                     "--manifest", str(tmp_path / "m.json")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_simulate_deterministic(tmp_path, sim_dir):
    assert cli.main(["simulate", "--seed", "0", "--out", str(tmp_path / "again")]) == 0
    for f in sorted(sim_dir.glob("*.csv")):
        assert (tmp_path / "again" / f.name).read_bytes() == f.read_bytes()


def test_check_informative(sim_dir, tmp_path, capsys):
    ds = str(sim_dir / "dataset.json")
    man = tmp_path / "check.json"
    assert cli.main(["check", ds, "--theta", "1e-6", "--manifest", str(man)]) == 0
    assert "verdict: informative" in capsys.readouterr().out
    assert json.loads(man.read_text())["result"]["verdict"] == "informative"
    assert cli.main(["check", ds, "--theta", "1e6", "--manifest", str(man)]) == 3


def test_check_rank_deficient(tmp_path):
    t = np.linspace(0, 1, 101)
    rows = ["t,u1,y1"] + [f"{x:.17g},1,1" for x in t]
    f = tmp_path / "const.csv"
    f.write_text("\n".join(rows) + "\n")
    code = cli.main(["check", str(f), "--L", "2", "--m", "1", "--p", "1", "--theta", "1",
                     "--manifest", str(tmp_path / "m.json")])
    assert code == 4


def test_check_emit_json(sim_dir, tmp_path, capsys):
    cli.main(["check", str(sim_dir / "dataset.json"), "--theta", "1e-6", "--emit", "json",
              "--manifest", str(tmp_path / "m.json")])
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"] == "informative"


def test_design_and_verify(sim_dir, tmp_path, capsys):
    ds = str(sim_dir / "dataset.json")
    out = tmp_path / "ctrl.json"
    assert cli.main(["design", ds, "--theta", "1e-6", "--out", str(out),
                     "--candidate", str(sim_dir / "truth.json")]) == 0
    text = capsys.readouterr().out
    assert "u''" in text
    assert (tmp_path / "ctrl.manifest.json").exists()
    cert = json.loads(out.read_text())
    assert any(v["system"] == "candidate_0" and v["hurwitz"] for v in cert["verification"])
    assert cli.main(["verify", str(sim_dir / "truth.json"), str(out),
                     "--manifest", str(tmp_path / "v.json")]) == 0
    # rerun reproduces the controller bit for bit
    out2 = tmp_path / "ctrl2.json"
    assert cli.main(["design", ds, "--theta", "1e-6", "--out", str(out2)]) == 0
    assert json.loads(out2.read_text())["C"] == cert["C"]


def test_design_not_informative(sim_dir, tmp_path):
    assert cli.main(["design", str(sim_dir / "dataset.json"), "--theta", "1e6",
                     "--out", str(tmp_path / "c.json")]) == 3


def test_verify_zero_controller(sim_dir, tmp_path):
    from synthop.stability import Controller
    zero = tmp_path / "zero.json"
    Controller.zero(2, 1, 2).save(zero)
    assert cli.main(["verify", str(sim_dir / "truth.json"), str(zero),
                     "--manifest", str(tmp_path / "v.json")]) == 1


def test_verify_dimension_mismatch(sim_dir, tmp_path):
    from synthop.stability import Controller
    c = tmp_path / "c.json"
    Controller.zero(1, 1, 1).save(c)
    assert cli.main(["verify", str(sim_dir / "truth.json"), str(c),
                     "--manifest", str(tmp_path / "v.json")]) == 2


def test_identify(tmp_path):
    d = tmp_path / "clean"
    assert cli.main(["simulate", "--seed", "3", "--sigma", "0", "--out", str(d)]) == 0
    truth = json.loads((d / "truth.json").read_text())
    from synthop.stability import ArSystem
    R0 = ArSystem.from_dict(truth).R
    for method, extra in (("operator", []), ("spline", ["--spline-level", "6"])):
        out = tmp_path / f"{method}.json"
        assert cli.main(["identify", str(d / "dataset.json"), "--method", method, *extra,
                         "--out", str(out)]) == 0
        R = ArSystem.load(out).R
        assert np.linalg.norm(R - R0) / np.linalg.norm(R0) < 1e-4


def test_config_file(sim_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"theta": "1e6", "emit": "json"}))
    code = cli.main(["check", str(sim_dir / "dataset.json"), "--config", str(cfg),
                     "--manifest", str(tmp_path / "m.json")])
    assert code == 3
    assert json.loads(capsys.readouterr().out)["verdict"] == "not informative"


def test_bad_usage_exit_code():
    r = subprocess.run([sys.executable, "-m", "synthop.cli", "check"], capture_output=True)
    assert r.returncode == 2


def test_controller_equation_format():
    from synthop.stability import Controller
    ctrl = Controller.from_blocks([[[1511.0]], [[49.0]]], [[[-552.0, -34715.0]], [[-3335.0, -9656.0]]])
    line = " ".join(cli.controller_equation(ctrl))
    print(line)
    assert "u''" in line and "49" in line and "34715" in line
