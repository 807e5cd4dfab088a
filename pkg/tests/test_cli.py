import csv
import json
import subprocess
import sys

import pytest

from ergojump.cli import main
from ergojump.solver import NonConvergenceWarning

OU_MODEL = {"builder": "linear1d",
            "params": {"actions": [{"drift": [0.0, -1.0], "cost": [0.0, 1.0]}], "sigma": 1.0,
                       "atoms": [[1.0, 0.5], [-0.5, 0.4]]}}


def small_config(out, **over):
    cfg = {
        "model": OU_MODEL,
        "grid": {"R": 6.0, "n": 61},
        "solver": {"alpha": 0.2, "tol": 1e-8},
        "sim": {"T": 40.0, "burn_in": 5.0, "h": 0.01, "seed": 3, "replications": 4, "record_every": 10},
        "sweep": {"radii": [0.0, 2.0, 4.0], "outer_control": 0},
        "verify": {"checks": ["perturbation", "truncation"], "perturbation_epsilon": 0.02},
        "out": str(out),
    }
    cfg.update(over)
    return cfg


def write_cfg(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.mark.parametrize("command, files", [
    ("solve-discounted", ["value.csv"]),
    ("solve-ergodic", ["value.csv"]),
    ("simulate", ["trajectory.csv", "histogram.csv"]),
    ("sweep", ["sweep.csv"]),
    ("verify", ["reports.json", "summary.txt"]),
])
def test_every_command_runs(tmp_path, command, files, capsys):
    out = tmp_path / "out"
    assert main([command, "--config", write_cfg(tmp_path, small_config(out))]) == 0
    m = manifest(out)
    assert m["command"] == command and m["exit_code"] == 0
    for f in files:
        assert (out / f).exists() and f in m["outputs"]
    assert m["config"]["model"]["params"]["sigma"] == 1.0
    if command == "verify":
        assert all(line.startswith("PASS") for line in capsys.readouterr().out.splitlines())


def test_csv_headers(tmp_path):
    out = tmp_path / "out"
    main(["simulate", "--config", write_cfg(tmp_path, small_config(out))])
    with open(out / "trajectory.csv") as fh:
        head = next(csv.reader(fh))
    assert head == ["t", "x_1", "u_index", "cumulative_cost"]
    with open(out / "histogram.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x_1", "mass"]
    total = sum(float(r[1]) for r in rows[1:]) + manifest(out)["results"]["escaped_mass"]
    assert total == pytest.approx(1.0, abs=1e-12)


def test_simulate_is_byte_identical(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["simulate", "--config", write_cfg(tmp_path, small_config(o), f"{o.name}.json")]) == 0
    for f in ("trajectory.csv", "histogram.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    ma, mb = manifest(outs[0]), manifest(outs[1])
    assert ma["results"] == mb["results"]


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, small_config(tmp_path / "a"))
    main(["simulate", "--config", cfg])
    main(["simulate", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "b")])
    assert manifest(tmp_path / "b")["config"]["sim"]["seed"] == 4
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_manifest_replay(tmp_path):
    out = tmp_path / "first"
    main(["solve-ergodic", "--config", write_cfg(tmp_path, small_config(out))])
    again = tmp_path / "second"
    assert main(["solve-ergodic", "--config", str(out / "manifest.json"), "--out", str(again)]) == 0
    assert (out / "value.csv").read_bytes() == (again / "value.csv").read_bytes()


def test_method_override(tmp_path):
    out = tmp_path / "vd"
    assert main(["solve-ergodic", "--config", write_cfg(tmp_path, small_config(out)), "--method", "vd"]) == 0
    m = manifest(out)
    assert m["config"]["solver"]["method"] == "vd" and "rho_hat" in m["results"]


def test_threads_flag(tmp_path):
    out = tmp_path / "t"
    assert main(["solve-ergodic", "--config", write_cfg(tmp_path, small_config(out)), "--threads", "1"]) == 0
    assert manifest(out)["threads"] == 1


def test_config_error_exit_1(tmp_path, capsys):
    cfg = small_config(tmp_path / "x", solver={"alpha": -0.1})
    assert main(["solve-discounted", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "config field 'solver.alpha'" in capsys.readouterr().err
    cfg = small_config(tmp_path / "x", model={"builder": "v", "params": {"bogus": 1}})
    assert main(["solve-ergodic", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "bogus" in capsys.readouterr().err
    assert main(["solve-ergodic", "--config", str(tmp_path / "missing.json")]) == 1


def test_missing_section_exit_1(tmp_path, capsys):
    cfg = small_config(tmp_path / "x")
    del cfg["sweep"]
    assert main(["sweep", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "'sweep'" in capsys.readouterr().err


def test_nonconvergence_exit_2(tmp_path):
    two = {"builder": "linear1d",
           "params": {"actions": [{"drift": [0.0, -0.5], "cost": [0.0, 1.0]},
                                  {"drift": [0.0, -2.0], "cost": [0.6, 1.0]}], "sigma": 1.0}}
    out = tmp_path / "nc"
    cfg = small_config(out, model=two, solver={"max_iter": 1})
    with pytest.warns(NonConvergenceWarning, match="max_iter"):
        assert main(["solve-ergodic", "--config", write_cfg(tmp_path, cfg)]) == 2
    m = manifest(out)
    assert m["exit_code"] == 2 and m["results"]["converged"] is False


def test_failed_verification_exit_3(tmp_path, capsys):
    out = tmp_path / "v"
    cfg = small_config(out, model={"builder": "v", "params": {}}, grid={"R": 20.0, "n": 41},
                       verify={"checks": ["assumptions"],
                               "lyapunov": {"Q": [5.0, 3.0], "k": 2.0, "scale": 4.0, "kappa_hat": 5.0,
                                            "control": 8}})
    v_params = {"ell": [0.2, 0.2], "M1": [[1.0, 0.0], [0.0, 1.5]], "gamma": [0.0, 1.0], "sigma": [1.0, 1.0],
                "c": [1.0, 2.0], "s": [1.0], "m": 1.0, "theta": [1.0, 0.5], "jump_rate": 0.5,
                "jump_sizes": [[0.6, 0.5], [1.2, 0.5]]}
    cfg["model"]["params"] = v_params
    assert main(["verify", "--config", write_cfg(tmp_path, cfg)]) == 3
    assert capsys.readouterr().out.startswith("FAIL assumptions")
    assert manifest(out)["results"]["passed"] == [False]


def test_module_entry_point(tmp_path):
    out = tmp_path / "m"
    r = subprocess.run([sys.executable, "-m", "ergojump", "sweep", "--config",
                        write_cfg(tmp_path, small_config(out))], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "R,rho" and len(rows) == 4


def test_outer_control_range_checked(tmp_path, capsys):
    cfg = small_config(tmp_path / "oc")
    cfg["sim"]["outer_control"] = 5
    assert main(["simulate", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "sim.outer_control" in capsys.readouterr().err
    cfg["sim"]["outer_control"] = 0
    assert main(["simulate", "--config", write_cfg(tmp_path, cfg)]) == 0
