import json
import shutil
import subprocess
import sys

import pytest

from landuse_cdr.cli import EXIT_CONFIG, EXIT_CONSISTENCY, EXIT_MISSING, EXIT_USAGE, PIPELINE, main
from landuse_cdr.config import ARTIFACTS

CONFIG = """\
# small city so the suite stays quick
seed = 5
grid.n_rows = 12
grid.n_cols = 12
synth.patch_size = 5
synth.n_weeks = 1
forest.n_trees = 20
forest.k_folds = 3
forest.weight_grid.commercial = 1, 2
forest.weight_grid.industrial = 1, 2
forest.weight_grid.parks = 1
forest.weight_grid.other = 1
ingest.min_total_events = 5
"""

FINAL = ("report.txt", "report.json", "error_groups.csv", "smoothed.csv", "predictions.csv")


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    root = tmp_path_factory.mktemp("city")
    (root / "run.cfg").write_text(CONFIG)
    assert main(["synth", "--config", str(root / "run.cfg"), "--workdir", str(root / "w")]) == 0
    assert main(["pipeline", "--config", str(root / "run.cfg"), "--workdir", str(root / "w")]) == 0
    return root


def fresh_copy(city, tmp_path, name="w"):
    dst = tmp_path / name
    shutil.copytree(city / "w", dst)
    return dst


def run(city, workdir, *args):
    return main([*args, "--config", str(city / "run.cfg"), "--workdir", str(workdir)])


def test_synth_then_pipeline_writes_everything(city):
    w = city / "w"
    for name in ("zoning.geojson", "events.csv.gz", *ARTIFACTS.values()):
        assert (w / name).exists(), name
    text = (w / "report.txt").read_text()
    assert "Total Accuracy:" in text and "All-Residential baseline accuracy:" in text
    doc = json.loads((w / "report.json").read_text())
    assert 0 <= doc["smoothed"]["total_accuracy"] <= 1


def test_manifests_record_hashes_seed_and_config(city):
    w = city / "w"
    for stage in ("synth", *PIPELINE):
        man = json.loads((w / f"{stage}.manifest.json").read_text())
        assert man["stage"] == stage and man["seed"] == 5
        assert man["config"]["forest.n_trees"] == 20 and "threads" not in man["config"]
        assert all(len(h) == 64 for h in man["outputs"].values())
        assert "numpy" in man["versions"]
    feat = json.loads((w / "features.manifest.json").read_text())
    ingest = json.loads((w / "ingest.manifest.json").read_text())
    assert feat["inputs"]["cube.csv"] == ingest["outputs"]["cube.csv"]


def test_rerun_is_byte_identical_across_thread_counts(city, tmp_path):
    w = fresh_copy(city, tmp_path)
    for name in FINAL:
        (w / name).unlink()
    assert run(city, w, "pipeline", "--threads", "0") == 0
    for name in (*FINAL, "forest.json", "cv_votes.csv", "train.manifest.json"):
        assert (w / name).read_bytes() == (city / "w" / name).read_bytes(), name


def test_second_synth_is_byte_identical(city, tmp_path):
    w = tmp_path / "w"
    assert run(city, w, "synth") == 0
    for name in ("events.csv.gz", "zoning.geojson", "truth.csv", "synth.manifest.json"):
        assert (w / name).read_bytes() == (city / "w" / name).read_bytes(), name


@pytest.mark.parametrize("missing, stages", [
    ("cube.csv", ("features", "train", "predict", "smooth", "evaluate")),
    ("forest.json", ("train", "predict", "smooth", "evaluate")),
    ("smoothed.csv", ("smooth", "evaluate")),
])
def test_stage_isolation(city, tmp_path, missing, stages):
    w = fresh_copy(city, tmp_path)
    (w / missing).unlink()
    if missing == "cube.csv":
        assert run(city, w, "ingest") == 0
    for stage in stages:
        assert run(city, w, stage) == 0
    for name in FINAL:
        assert (w / name).read_bytes() == (city / "w" / name).read_bytes(), name


def test_missing_input_exit_code_names_path(city, tmp_path, capsys):
    w = fresh_copy(city, tmp_path)
    (w / "features.csv").unlink()
    assert run(city, w, "train") == EXIT_MISSING
    assert f"missing input: {w / 'features.csv'}" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == EXIT_MISSING


def test_unknown_subcommand_and_bad_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    assert "usage:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == EXIT_USAGE


def test_bad_config_lists_fields(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("grid.n_rows = many\nforest.frobs = 3\nforest.mtry = 0\n")
    assert main(["features", "--config", str(tmp_path / "bad.cfg")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "grid.n_rows: invalid literal" in err and "forest.frobs: unknown key" in err
    assert main(["features", "--set", "smooth.iterate=maybe"]) == EXIT_CONFIG
    assert main(["features", "--set", "novalue"]) == EXIT_CONFIG


def test_grid_mismatch_is_consistency_error(city, tmp_path):
    w = fresh_copy(city, tmp_path)
    assert run(city, w, "features", "--set", "grid.n_rows=11") == EXIT_CONSISTENCY


def test_flag_wins_over_config_file(city, tmp_path):
    w = fresh_copy(city, tmp_path)
    assert run(city, w, "train", "--set", "forest.n_trees=7", "--seed", "9") == 0
    man = json.loads((w / "train.manifest.json").read_text())
    assert man["config"]["forest.n_trees"] == 7 and man["seed"] == 9
    assert json.loads((w / "forest.json").read_text())["config"]["n_trees"] == 7


def test_predict_from_full_forest(city, tmp_path):
    w = fresh_copy(city, tmp_path)
    assert run(city, w, "predict", "--set", "predict.source=forest") == 0
    lines = (w / "predictions.csv").read_text().splitlines()
    assert lines[0] == "row,col,predicted_code,provenance" and len(lines) > 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "landuse_cdr", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "pipeline" in out.stdout
