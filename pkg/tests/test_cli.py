import numpy as np
import pytest
import yaml

from legsafe import config as C
from legsafe.cli import main
from legsafe.estimator import Dataset
from legsafe.scenario import read_log


def test_simulate_writes_a_valid_log(tmp_path, capsys):
    out = tmp_path / "run.csv"
    assert main(["simulate", "--set", "duration=0.1", "--out", str(out)]) == 0
    assert "fallen: False" in capsys.readouterr().out
    assert main(["schema-check", str(out)]) == 0
    assert len(read_log(out)) == 50


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"duration": 2.0, "filter": {"mu": 0.3}, "seed": 4}))
    cfg = C.load_config(path, ["filter.mu=0.5"], seed=9)
    assert cfg["duration"] == 2.0 and cfg["filter"]["mu"] == 0.5 and cfg["seed"] == 9
    assert cfg["filter"]["alpha1"] == C.DEFAULTS["filter"]["alpha1"]


@pytest.mark.parametrize("override", ["bogus=1", "filter.bogus=1", "filter.alpha1=0",
                                      "terrain.profile=stairs", "sim.dt_sim=0.01",
                                      "terrain.params={height: 1}", "model=missing.robot",
                                      "duration=abc", "filter.mu_source=estimator"])
def test_bad_config_exits_nonzero(override, tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert main(["simulate", "--set", "duration=0.01", "--set", override, "--out", str(out)]) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_fall_exits_nonzero(tmp_path, capsys):
    rc = main(["simulate", "--set", "gait.kp=0", "--set", "gait.kd=0", "--set", "duration=1",
               "--set", "filter.enabled=false", "--out", str(tmp_path / "f.csv")])
    assert rc == 1
    assert "fell" in capsys.readouterr().err


def test_seeded_runs_are_identical(tmp_path):
    outs = []
    for name, seed in (("a", 3), ("b", 3), ("c", 4)):
        out = tmp_path / f"{name}.csv"
        main(["simulate", "--seed", str(seed), "--set", "init_noise=0.05",
              "--set", "duration=0.1", "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]


def test_schema_check_flags_a_broken_log(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,phi\n0,0\n")
    assert main(["schema-check", str(bad)]) == 1
    assert "header" in capsys.readouterr().out


def test_estimator_pipeline(tmp_path, capsys):
    data, model = tmp_path / "d.bin", tmp_path / "m.bin"
    common = ["--set", "data.n_samples=10", "--set", "data.run_duration=2.0"]
    assert main(["gen-data", "--out", str(data), "--seed", "1"] + common) == 0
    ds = Dataset.load(data)
    assert ds.features.shape == (10, 40, 36)
    assert main(["train", "--data", str(data), "--out", str(model), "--set", "train.epochs=2",
                 "--set", "estimator.d=8", "--set", "estimator.k=4", "--set", "estimator.heads=2",
                 "--set", "estimator.d_ff=16"]) == 0
    metrics = model.with_suffix(".metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("epoch,") and len(metrics) == 3
    scatter = tmp_path / "s.csv"
    assert main(["evaluate", "--model", str(model), "--data", str(data), "--split", "train",
                 "--out", str(scatter)]) == 0
    rows = scatter.read_text().splitlines()
    assert rows[0] == "index,run,label,prediction"
    assert len(rows) - 1 == len(ds.split_indices("train"))
    vals = np.array([[float(x) for x in r.split(",")[2:]] for r in rows[1:]])
    assert np.all(np.isfinite(vals))


def test_bench(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--repeats", "5", "--sizes", "24,48", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("benchmark,size")
    assert {l.split(",")[0] for l in lines[1:]} == {"qp_filter_solve", "dynamics_crba_rnea",
                                                    "attention_block", "attention_block_allocating"}
