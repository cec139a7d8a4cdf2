import csv
import json
import os
import subprocess
import sys

import pytest

from physaware.cli import (
    JgpConfig,
    ReproduceConfig,
    SUMMARY_HEADER,
    ConfigError,
    main,
    parse_config,
)
from physaware.io import read_csv

SMALL_JGP = {"n_real": 10, "n_sim": 30, "n_test": 40, "opt_budget": 60}


def _cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


def _data_files(d):
    return sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file() and p.name != "manifest.json")


def test_malformed_json_exit_2_no_output(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["jgp", "run", "--seed", "1", "--out", str(out), "--config", _cfg(tmp_path, "{oops")])
    assert code == 2
    assert not out.exists()
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and json.loads(err[0])["error"] == "validation"


def test_unknown_field_rejected(tmp_path):
    out = tmp_path / "out"
    code = main(["jgp", "run", "--seed", "1", "--out", str(out),
                 "--config", _cfg(tmp_path, {"n_real": 8, "lengthscale": 2.0})])
    assert code == 2 and not out.exists()


def test_seed_required(tmp_path):
    assert main(["jgp", "run", "--out", str(tmp_path / "o")]) == 2


def test_seed_range(tmp_path):
    assert main(["jgp", "run", "--seed", str(2**64), "--out", str(tmp_path / "o")]) == 2


def test_type_checked():
    with pytest.raises(ConfigError):
        parse_config(JgpConfig, {"n_real": "8"})
    with pytest.raises(ConfigError):
        parse_config(JgpConfig, {"n_real": True})
    assert parse_config(JgpConfig, {"target_noise": 1}).target_noise == 1


def test_reproduce_config_rejects_unknown_id():
    with pytest.raises(ConfigError):
        ReproduceConfig(criteria=["11"])


def test_jgp_run_and_rerun_identical(tmp_path):
    cfg = _cfg(tmp_path, {"seed": 5, **SMALL_JGP})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["jgp", "run", "--out", str(a), "--config", cfg]) == 0
    assert main(["jgp", "run", "--out", str(b), "--config", cfg]) == 0
    header, rows = read_csv(a / "rmse_table.csv")
    assert len(rows) == 4
    assert [r[0] for r in rows] == ["GP_R", "GP_S", "GP_R+S", "JGP"]
    files = _data_files(a)
    assert files == _data_files(b)
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert sorted(man["files"]) == sorted(str(f) for f in files)
    assert man["config_hash"] == json.loads((b / "manifest.json").read_text())["config_hash"]


def test_seed_flag_overrides_config(tmp_path):
    cfg = _cfg(tmp_path, {"seed": 5, **SMALL_JGP})
    a, b = tmp_path / "a", tmp_path / "b"
    main(["jgp", "run", "--out", str(a), "--config", cfg])
    main(["jgp", "run", "--seed", "6", "--out", str(b), "--config", cfg])
    assert (a / "predictions.csv").read_bytes() != (b / "predictions.csv").read_bytes()


def test_floats_have_17_digits(tmp_path):
    out = tmp_path / "o"
    main(["synth", "export", "--seed", "0", "--out", str(out),
          "--config", _cfg(tmp_path, {"dataset": "logistic", "T": 20})])
    files = _data_files(out)
    assert files
    text = (out / files[0]).read_text()
    cells = [c for line in text.splitlines()[1:] for c in line.split(",")]
    floats = [c for c in cells if "." in c]
    assert floats and all(float(repr(float(c))) == float(c) for c in floats)
    assert max(len(c.replace("-", "").replace(".", "").lstrip("0").split("e")[0]) for c in floats) >= 15


@pytest.mark.parametrize("argv,cfg,expect", [
    (["distmatch", "run"], {"n_real": 12, "n_sim": 30, "n_test": 40, "lambdas": [1.0], "nus": [0.0, 10.0],
                             "folds": 3, "steps": 5}, ["cv_table.csv", "histograms.csv"]),
    (["fkl", "curve"], {"n_train": 20, "n_test": 50, "fractions": [0.0, 0.5]}, ["consistency_curves.csv"]),
    (["emulate", "bench", "--runs", "1"], {"max_points": 8, "n_per_axis": 10},
     ["rmse_curves.csv", "points_to_target.csv"]),
    (["prior", "fit"], {"J": 12, "K": 100, "iters": 2}, ["prior_trace.csv", "posterior_draws.csv"]),
    (["lfm", "run"], {"n_days": 40, "opt_budget": 40, "n_starts": 1, "gap": [10.0, 20.0]},
     ["predictions.csv", "latent.csv", "params.csv"]),
    (["discover", "run"], {"grid_n": 4}, ["model.json", "field.csv", "trajectories.csv"]),
    (["gibbs", "logistic", "--trials", "1"], {"iters": 60, "burn_in": 10, "n_grid": 64},
     ["estimates.csv", "conditional_slice.csv"]),
])
def test_subcommands_write_outputs(tmp_path, argv, cfg, expect):
    out = tmp_path / "o"
    code = main(argv + ["--seed", "3", "--out", str(out), "--config", _cfg(tmp_path, cfg)])
    assert code == 0
    for name in expect:
        assert (out / name).exists()
    assert (out / "manifest.json").exists()


def test_discover_reads_trajectory(tmp_path):
    import numpy as np

    t = np.arange(0, 2, 0.01)
    with open(tmp_path / "traj.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x1", "x2"])
        for ti in t:
            w.writerow([ti, np.exp(-ti), 2 * np.exp(-2 * ti)])
    out = tmp_path / "o"
    code = main(["discover", "run", "--seed", "0", "--out", str(out), "--traj", str(tmp_path / "traj.csv"),
                 "--config", _cfg(tmp_path, {"threshold": 0.5})])
    assert code == 0
    model = json.loads((out / "model.json").read_text())
    assert model["fit_r"] > 0.99


def test_reproduce_summary_and_injected_failure(tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, {"criteria": ["1", "8"], "quick": True})
    assert main(["reproduce-all", "--seed", "0", "--out", str(out), "--config", cfg]) == 0
    header, rows = read_csv(out / "summary.csv")
    assert header == SUMMARY_HEADER == ["id", "status", "value", "threshold", "seconds"]
    assert [r[0] for r in rows] == ["1", "8"] and all(r[1] == "pass" for r in rows)

    out2 = tmp_path / "o2"
    cfg2 = _cfg(tmp_path, {"criteria": ["1", "8"], "quick": True, "inject_threshold": {"1": 0}}, "c2.json")
    assert main(["reproduce-all", "--seed", "0", "--out", str(out2), "--config", cfg2]) == 1
    rows2 = dict((r[0], r[1]) for r in read_csv(out2 / "summary.csv")[1])
    assert rows2 == {"1": "fail", "8": "pass"}


def test_console_entry_point(tmp_path):
    out = tmp_path / "o"
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "physaware.cli", "gibbs", "logistic", "--out", str(out)],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 2
    assert json.loads(r.stderr.strip())["error"] == "validation"
