import json

import numpy as np
import pytest

from lyocert.cli import main


def _cfg(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _read(path):
    return json.loads(path.read_text())


def test_gen_plant_and_manifest(tmp_path):
    cfg = _cfg(tmp_path, "plant.json", {"source": "plant", "plant": {"velocity_gain": [3, 5]}, "duration": 0.2})
    out = tmp_path / "data"
    assert main(["gen", "--config", cfg, "--n", "99", "--out", str(out), "--seed", "1"]) == 0
    m = _read(out / "manifest.json")
    assert len(m["files"]) == 99 and m["role"] == "train"
    run = _read(out / "run_manifest.json")
    assert run == {"command": "gen", "config_path": cfg, "seed": 1, "output_dir": str(out), "tool_version": run["tool_version"]}


def test_gen_is_byte_identical(tmp_path):
    args = ["gen", "--source", "linear", "--n", "3", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for f in sorted((tmp_path / "a").glob("*.csv")) + [tmp_path / "a" / "manifest.json"]:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_gen_rejects_zero(tmp_path, capsys):
    assert main(["gen", "--n", "0", "--out", str(tmp_path)]) == 2
    assert "n must be ≥ 1" in capsys.readouterr().err


@pytest.mark.parametrize("bad", ['{"n": 3, "plant": {"mass": 1}}', "[1, 2]", "{not json"])
def test_config_errors(tmp_path, bad):
    p = tmp_path / "c.json"
    p.write_text(bad)
    assert main(["gen", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_bound_direct_and_domain(tmp_path):
    assert main(["bound", "--violations", "3", "--samples", "499", "--delta", "0.01", "--out", str(tmp_path)]) == 0
    rep = _read(tmp_path / "bound.json")
    assert abs(rep["c_bar"] - 0.0739) < 5e-4
    assert {"c_hat", "m", "delta", "c_bar"} <= set(rep)
    assert main(["bound", "--violations", "0", "--samples", "100", "--delta", "0.01", "--out", str(tmp_path)]) == 0
    rep = _read(tmp_path / "bound.json")
    assert rep["c_bar"] == rep["confidence_term"]
    for d in ("0", "1.5", "-0.1"):
        assert main(["bound", "--violations", "0", "--samples", "10", "--delta", d, "--out", str(tmp_path)]) == 2


@pytest.fixture(scope="module")
def linear_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("lin")
    cfg = _cfg(d, "lin.json", {"source": "linear", "duration": 2.0})
    assert main(["gen", "--config", cfg, "--n", "4", "--out", str(d / "data")]) == 0
    return d / "data"


def test_train_writes_candidate(tmp_path, linear_data):
    cfg = _cfg(tmp_path, "t.json", {"train": {"max_epochs": 50, "restarts": 1}})
    assert main(["train", "--config", cfg, "--data", str(linear_data), "--lam", "0.5", "--out", str(tmp_path)]) == 0
    c = _read(tmp_path / "candidate.json")
    assert c["n"] == 2 and c["lambda"] == 0.5 and c["epsilon"] is None
    assert (tmp_path / "loss_history.csv").read_text().startswith("epoch,loss\n0,")


def test_certify_validate_bound_pipeline(tmp_path, linear_data):
    cfg = _cfg(tmp_path, "c.json", {"train": {"max_epochs": 800, "restarts": 1}})
    code = main(["certify", "--config", cfg, "--data", str(linear_data), "--lambda-min", "0", "--lambda-max", "4",
                 "--resolution", "1", "--out", str(tmp_path / "cert")])
    cert = _read(tmp_path / "cert" / "certificate.json")
    assert code == (3 if cert["never_converged"] else 0)
    assert cert["resolution"] == 1 and cert["history"]
    cpath = str(tmp_path / "cert" / "certificate.json")
    assert main(["validate", "--cert", cpath, "--data", str(linear_data), "--out", str(tmp_path / "v")]) == 0
    v = _read(tmp_path / "v" / "validation.json")
    assert v["violations"] == 0 and v["total"] > 0
    assert main(["bound", "--cert", cpath, "--data", str(linear_data), "--out", str(tmp_path / "b")]) == 0
    assert _read(tmp_path / "b" / "bound.json")["c_hat"] == 0


def test_certify_infeasible_bracket_exits_3(tmp_path, linear_data):
    cfg = _cfg(tmp_path, "c.json", {"train": {"max_epochs": 100, "restarts": 1}})
    code = main(["certify", "--config", cfg, "--data", str(linear_data), "--lambda-min", "50", "--lambda-max", "100",
                 "--resolution", "20", "--out", str(tmp_path)])
    assert code == 3
    assert _read(tmp_path / "certificate.json")["never_converged"] is True


def test_run_far_reference(tmp_path):
    cfg = _cfg(tmp_path, "run.json", {
        "spec": {"obstacles": [{"center": [0.6, 0.5], "radius": 0.25}], "alpha": 1.0, "epsilon": 0.0},
        "waypoints": [[0, 0], [-0.5, -0.3]], "k_p": 1.0, "duration": 1.0,
    })
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
    s = _read(tmp_path / "summary.json")
    assert s["filter_activity"] == 0.0 and s["min_h"] > 0
    assert (tmp_path / "scenario.csv").read_text().startswith("t,x0,x1,dx0,dx1,h0\n")


def test_run_infeasible_exits_4(tmp_path):
    cfg = _cfg(tmp_path, "run.json", {
        "spec": {"obstacles": [{"center": [-0.5, 0], "radius": 1}, {"center": [0.5, 0], "radius": 1}], "alpha": 1.0},
        "waypoints": [[0, 0]], "duration": 0.2,
    })
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 4


def test_run_missing_waypoints(tmp_path):
    cfg = _cfg(tmp_path, "run.json", {"spec": {"obstacles": [], "alpha": 1.0}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_sweep_outputs(tmp_path, capsys):
    cert = {"n": 2, "L": [[1.0, 0.0], [0.0, 1.0]], "lambda": 5.0, "gamma": 0.001, "epsilon": 0.0, "seed": 0}
    cpath = _cfg(tmp_path, "cert.json", cert)
    cfg = _cfg(tmp_path, "sweep.json", {
        "plant": {"disturbance_bound": 0.05},
        "spec": {"obstacles": [{"center": [0.6, 0.5], "radius": 0.25}]},
        "waypoints": [[0, 0], [0.6, 0.5]], "k_p": 1.0, "duration": 4.0,
        "alphas": [1, 2], "epsilons": ["cert", 0.04],
    })
    assert main(["sweep", "--config", cfg, "--cert", cpath, "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("alpha,eps=0,")
    verdicts = (tmp_path / "sweep_verdicts.txt").read_text()
    assert "alpha_monotone:" in verdicts and "alpha_below_lambda_safe: PASS" in verdicts
    assert "epsilon_monotone" in capsys.readouterr().out


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
