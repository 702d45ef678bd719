import subprocess
import sys

import pytest

from turbine_nbm.cli import main, read_config
from turbine_nbm.model_core import load_model


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--days", "60", "--seed", "7", "--out", str(d / "clean.csv")]) == 0
    assert main(["generate", "--days", "60", "--seed", "7", "--out", str(d / "fault.csv"),
                 "--fault-kind", "power-derate", "--fault-day", "48", "--fault-magnitude", "0.1"]) == 0
    return d


def test_generate_row_count(tmp_path):
    out = tmp_path / "d.csv"
    assert run("generate", "--days", 365, "--seed", 42, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 52560 + 1
    manifest = (tmp_path / "d.csv.manifest").read_text()
    assert "command=generate" in manifest and "seed=42" in manifest
    assert (tmp_path / "d.csv.meta").exists()


def test_generate_is_deterministic(work, tmp_path):
    out = tmp_path / "again.csv"
    assert run("generate", "--days", 60, "--seed", 7, "--out", out) == 0
    assert out.read_bytes() == (work / "clean.csv").read_bytes()


def test_usage_errors(work, tmp_path, capsys):
    assert run("generate", "--days", 0, "--seed", 1, "--out", tmp_path / "x.csv") == 2
    assert "--days" in capsys.readouterr().err
    assert run("generate", "--days", 1, "--out", tmp_path / "x.csv") == 2
    assert run("train", "--data", work / "clean.csv", "--family", "svm", "--out", tmp_path / "m") == 2
    assert run("train", "--data", work / "clean.csv", "--family", "forest", "--out", tmp_path / "m") == 2
    assert run("train", "--data", work / "clean.csv", "--family", "tree", "--out", tmp_path / "m",
               "--set", "hp.depth=3") == 2
    assert run("bogus") == 2
    assert not (tmp_path / "x.csv").exists()


def test_runtime_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,scada,table\n")
    assert run("train", "--data", bad, "--family", "tree", "--out", tmp_path / "m") == 1
    assert "error" in capsys.readouterr().err
    assert run("train", "--data", tmp_path / "missing.csv", "--family", "tree", "--out", tmp_path / "m") == 1


def test_train_and_evaluate(work, tmp_path):
    model = tmp_path / "t.nbm"
    assert run("train", "--data", work / "clean.csv", "--family", "tree", "--out", model) == 0
    again = tmp_path / "t2.nbm"
    assert run("train", "--data", work / "clean.csv", "--family", "tree", "--out", again) == 0
    assert model.read_bytes() == again.read_bytes()
    m = load_model(model)
    assert m.metadata.hyperparameters["max_depth"] == 7 and m.depth <= 7

    rep = tmp_path / "eval.txt"
    assert run("evaluate", "--data", work / "clean.csv", "--model", model, "--out", rep, "--qq", 10) == 0
    kv = dict(line.split("=", 1) for line in rep.read_text().splitlines())
    assert {k for k in kv if k.startswith("rmse.")} == {
        "rmse.active_power", "rmse.rotor_speed", "rmse.generator_speed", "rmse.current"}
    assert float(kv["global_rmse"]) > 0
    assert len((tmp_path / "eval.txt.qq").read_text().splitlines()) == 1 + 4 * 10
    first = rep.read_bytes()
    assert run("evaluate", "--data", work / "clean.csv", "--model", model, "--out", rep, "--qq", 10) == 0
    assert rep.read_bytes() == first


def test_evaluate_rejects_mismatched_schema(work, tmp_path):
    model = tmp_path / "s.nbm"
    assert run("train", "--data", work / "clean.csv", "--family", "knn", "--direction-mode", "sincos",
               "--out", model, "--targets", "power") == 0
    other = tmp_path / "other.nbm"
    assert run("train", "--data", work / "clean.csv", "--family", "knn", "--out", other) == 0
    bad = tmp_path / "bad.csv"
    text = (work / "clean.csv").read_text().splitlines()
    bad.write_text("\n".join([text[0].replace("current", "amps")] + text[1:]) + "\n")
    assert run("evaluate", "--data", bad, "--model", other, "--out", tmp_path / "r") == 1


def test_config_file_and_overrides(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# tree run\ndata = {work / 'clean.csv'}\nfamily = tree\nhp.max_depth = 3\n"
                   "hp.min_samples_split = 60  # inline comment\n")
    model = tmp_path / "c.nbm"
    assert run("train", "--config", cfg, "--out", model) == 0
    assert load_model(model).depth <= 3
    assert run("train", "--config", cfg, "--out", model, "--set", "hp.max_depth=2") == 0
    assert load_model(model).depth <= 2
    # the file's tree settings do not apply to knn
    assert run("train", "--config", cfg, "--out", model, "--family", "knn") == 2
    assert read_config(cfg)["hp.max_depth"] == "3"
    cfg.write_text("neighbours = 3\n")
    assert run("train", "--config", cfg, "--data", work / "clean.csv", "--family", "knn",
               "--out", model) == 2


def test_tune(work, tmp_path):
    out = tmp_path / "tune.csv"
    assert run("tune", "--data", work / "clean.csv", "--family", "knn", "--out", out,
               "--set", "grid.K=7") == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "rank,K,val_global_rmse" and lines[2].startswith("1,7,")
    assert run("tune", "--data", work / "clean.csv", "--family", "knn", "--out", out,
               "--set", "grid.K=1,2,3,4", "--cap", 3) == 2


def test_detect_clean_vs_derate(work, tmp_path):
    for name in ("clean", "fault"):
        assert run("train", "--data", work / f"{name}.csv", "--family", "tree",
                   "--out", tmp_path / f"{name}.nbm") == 0
        assert run("detect", "--data", work / f"{name}.csv", "--model", tmp_path / f"{name}.nbm",
                   "--out", tmp_path / f"{name}.events") == 0
    clean = (tmp_path / "clean.events").read_text().splitlines()
    fault = (tmp_path / "fault.events").read_text().splitlines()
    assert clean == ["target,start_row,end_row,start_timestamp,end_timestamp,length,peak_z,mean_z"]
    power = [line for line in fault[1:] if line.startswith("active_power,")]
    assert power and all(int(line.split(",")[1]) >= 48 * 144 for line in power)
    first = (tmp_path / "fault.events").read_bytes()
    assert run("detect", "--data", work / "fault.csv", "--model", tmp_path / "fault.nbm",
               "--out", tmp_path / "fault.events") == 0
    assert (tmp_path / "fault.events").read_bytes() == first


def test_benchmark_subset(work, tmp_path):
    out = tmp_path / "bench.txt"
    assert run("benchmark", "--data", work / "clean.csv", "--seed", 3, "--families", "tree,knn",
               "--out", out) == 0
    text = out.read_text()
    assert "Decision tree," in text and "KNN," in text and "MLP," not in text
    assert (tmp_path / "bench.txt.kv").exists()
    assert run("benchmark", "--data", work / "clean.csv", "--out", out) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "turbine_nbm", "generate", "--days", "0", "--seed", "1",
                           "--out", str(tmp_path / "x")], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stdout == "" and "days" in proc.stderr
