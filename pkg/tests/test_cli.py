import hashlib
import json
import os
import subprocess
import sys

import pytest

from propval.cli import build_parser, config_hash, resolve_config, run

FAST_GAM = ["--knots-size", "10", "--knots-location", "30"]


def sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def first_line(path):
    with open(path, encoding="utf-8") as fh:
        return fh.readline()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run(["simulate", "--n", "600", "--seed", "4", "--output-dir", str(out)], {}) == 0
    return out


def test_usage_errors_exit_1(capsys):
    assert run(["fit", "--no-such-flag"], {}) == 1
    assert run([], {}) == 1
    assert run(["frobnicate"], {}) == 1
    assert "usage" in capsys.readouterr().err


def test_version_and_help_exit_0(capsys):
    assert run(["--version"], {}) == 0
    assert "propval" in capsys.readouterr().out
    assert run(["cv", "--help"], {}) == 0


def test_missing_input_exit_1(tmp_path):
    assert run(["fit", "--model", "hedonic", "--records", str(tmp_path / "nope.csv"),
                "--output-dir", str(tmp_path)], {}) == 1
    assert run(["fit", "--model", "glm", "--output-dir", str(tmp_path)], {}) == 1


def test_simulate_writes_everything(sim_dir):
    for name in ("records.csv", "truth.json", "regions.geojson", "cities.geojson", "towns.csv",
                 "simulate.config.json"):
        assert (sim_dir / name).is_file(), name
    with open(sim_dir / "records.csv", encoding="utf-8") as fh:
        rows = [l for l in fh if not l.startswith("#")]
    assert len(rows) == 601
    meta = json.loads((sim_dir / "truth.json").read_text())["metadata"]
    assert meta["seed"] == 4 and len(meta["config_hash"]) == 16


def test_fit_predict_round_trip(sim_dir, tmp_path):
    records = str(sim_dir / "records.csv")
    before = sha(records)
    out = str(tmp_path)
    assert run(["fit", "--model", "hedonic", "--records", records, "--output-dir", out], {}) == 0
    model = json.loads((tmp_path / "model.json").read_text())
    h = model["metadata"]["config_hash"]
    assert model["metadata"]["seed"] == 1
    assert first_line(tmp_path / "parametric.csv") == f"# propval fit config_hash={h} seed=1\n"

    assert run(["predict", "--model-file", out + "/model.json", "--records", records,
                "--output-dir", out], {}) == 0
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0].startswith("# propval predict config_hash=")
    assert lines[1].startswith("id,price,predicted")
    assert len(lines) == 2 + 600
    assert sha(records) == before

    assert run(["report", "--model-file", out + "/model.json", "--output-dir", out], {}) == 0
    assert "Multiplicative effects" in (tmp_path / "report.txt").read_text()


def test_gam_surfaces(sim_dir, tmp_path):
    args = ["--records", str(sim_dir / "records.csv"), "--regions", str(sim_dir / "regions.geojson"),
            "--output-dir", str(tmp_path)]
    assert run(["fit", "--model", "ngam", *FAST_GAM, *args], {}) == 0
    assert run(["surfaces", "--model-file", str(tmp_path / "model.json"), "--cell-m", "20000",
                "--regions", str(sim_dir / "regions.geojson"), "--output-dir", str(tmp_path)], {}) == 0
    infl = (tmp_path / "inflation.csv").read_text().splitlines()
    assert infl[1].startswith("group,m1") and infl[2].startswith("all,1.0,")
    assert (tmp_path / "surface_fused.csv").stat().st_size > 0


def test_forest_fit_and_report(sim_dir, tmp_path):
    assert run(["fit", "--model", "rf", "--trees", "10", "--records", str(sim_dir / "records.csv"),
                "--regions", str(sim_dir / "regions.geojson"), "--output-dir", str(tmp_path)], {}) == 0
    imp = (tmp_path / "importance.csv").read_text().splitlines()
    assert imp[1] == "feature,importance" and len(imp) == 2 + 22  # default 21 plus county from the regions
    assert run(["report", "--model-file", str(tmp_path / "forest.json"),
                "--output-dir", str(tmp_path)], {}) == 0


def _cv(sim_dir, out, threads):
    return run(["cv", "--records", str(sim_dir / "records.csv"),
                "--regions", str(sim_dir / "regions.geojson"), "--model", "sgam,ngam,hedonic,rf",
                "--folds", "3", "--trees", "15", "--permutations", "19", "--threads", str(threads),
                *FAST_GAM, "--output-dir", str(out)], {})


def test_cv_four_models_thread_independent(sim_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _cv(sim_dir, a, 1) == 0
    assert _cv(sim_dir, b, 3) == 0
    names = ("metrics.csv", "submarkets.csv", "comparison.txt", "morans.csv", "heldout.csv")
    for name in names:
        assert sha(a / name) == sha(b / name), name
    table = (a / "comparison.txt").read_text()
    for label in ("S-GAM", "N-GAM", "Hedonic Model", "Random Forest"):
        assert label in table
    heldout = (a / "heldout.csv").read_text().splitlines()
    assert len(heldout) == 2 + 4 * 600


def test_config_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\noutput_dir = from-file\nseed = 5\nthreads = 2\n[forest]\nn_trees = 7\n")
    parse = build_parser().parse_args

    cfg = resolve_config(parse(["fit", "--config", str(ini)]), {})
    assert (cfg["run"]["output_dir"], cfg["run"]["seed"], cfg["forest"]["n_trees"]) == \
        ("from-file", 5, 7)
    env = {"PROPVAL_OUTPUT_DIR": "from-env", "PROPVAL_THREADS": "3"}
    cfg = resolve_config(parse(["fit", "--config", str(ini)]), env)
    assert (cfg["run"]["output_dir"], cfg["run"]["threads"]) == ("from-env", 3)
    cfg = resolve_config(parse(["fit", "--config", str(ini), "--output-dir", "flag",
                                "--threads", "4"]), env)
    assert (cfg["run"]["output_dir"], cfg["run"]["threads"], cfg["run"]["seed"]) == ("flag", 4, 5)
    assert resolve_config(parse(["fit"]), {})["model"]["knots_location"] == 400


def test_bad_config_exit_1(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[model]\nknots_size = many\n")
    assert run(["fit", "--config", str(ini), "--output-dir", str(tmp_path)], {}) == 1
    ini.write_text("[model]\nno_such_key = 1\n")
    assert run(["fit", "--config", str(ini), "--output-dir", str(tmp_path)], {}) == 1
    assert run(["fit", "--output-dir", str(tmp_path)], {"PROPVAL_THREADS": "0"}) == 1


def test_hash_ignores_environment_settings():
    parse = build_parser().parse_args
    a = resolve_config(parse(["cv", "--threads", "1", "--output-dir", "x"]), {})
    b = resolve_config(parse(["cv", "--threads", "8", "--output-dir", "y"]), {})
    c = resolve_config(parse(["cv", "--seed", "2"]), {})
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_env_output_dir_used(sim_dir, tmp_path):
    out = tmp_path / "env-out"
    env = {"PROPVAL_OUTPUT_DIR": str(out)}
    assert run(["fit", "--model", "hedonic", "--records", str(sim_dir / "records.csv")], env) == 0
    assert (out / "model.json").is_file()


def test_fit_failure_exit_2(tmp_path):
    # too few Limerick records for its own unpenalized columns
    assert run(["simulate", "--n", "600", "--seed", "5", "--output-dir", str(tmp_path)], {}) == 0
    assert run(["fit", "--model", "sgam", *FAST_GAM, "--output-dir", str(tmp_path)], {}) == 2


def test_refuses_to_overwrite_input(sim_dir, tmp_path):
    model_dir = tmp_path
    assert run(["fit", "--model", "hedonic", "--records", str(sim_dir / "records.csv"),
                "--output-dir", str(model_dir)], {}) == 0
    # predictions are written as predictions.csv, so pointing records there must be refused
    pred = model_dir / "predictions.csv"
    pred.write_text((sim_dir / "records.csv").read_text())
    before = sha(pred)
    assert run(["predict", "--model-file", str(model_dir / "model.json"), "--records", str(pred),
                "--output-dir", str(model_dir)], {}) == 1
    assert sha(pred) == before


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "propval.cli", "simulate", "--n", "200",
                           "--output-dir", str(tmp_path)], capture_output=True, text=True,
                          env={**os.environ, "PROPVAL_THREADS": ""})
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("simulate: 200 records")
