import csv
import json
import math
import subprocess
import sys

import pytest

from mobinfer.cli import main

QUICK_CONFIG = "[train]\nlearning_rate = 1e-3\nbatch_size = 128\nmax_epochs = 2\npatience = 1\n"


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "s.toml"
    spec.write_text("[cohort]\nn_households = 90\nseed = 4\n")
    (root / "quick.toml").write_text(QUICK_CONFIG)
    assert main(["synth", "--spec", str(spec), "--out", str(root / "data")]) == 0
    return root


def test_no_arguments_is_a_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_entry_point_exit_code():
    proc = subprocess.run([sys.executable, "-m", "mobinfer.cli"], capture_output=True)
    assert proc.returncode == 1


def test_missing_column_is_a_data_error(tmp_path):
    (tmp_path / "trips.csv").write_text("person_id,household_id\nA,B\n")
    assert main(["ingest", "--trips", str(tmp_path / "trips.csv"), "--out", str(tmp_path)]) == 2


def test_synth_writes_files_and_manifest(cohort_dir):
    data = cohort_dir / "data"
    for name in ("trips.csv", "persons.csv", "manifest.json", "run_manifest_synth.json"):
        assert (data / name).exists()
    man = json.loads((data / "run_manifest_synth.json").read_text())
    assert man["command"] == "synth" and set(man["outputs"]) >= {"trips.csv", "persons.csv"}


def test_ingest_and_features(cohort_dir, tmp_path):
    data = str(cohort_dir / "data")
    assert main(["ingest", "--data", data, "--out", str(tmp_path)]) == 0
    assert main(["features", "--data", data, "--out", str(tmp_path), "--feature-set", "M"]) == 0
    man = json.loads((tmp_path / "run_manifest_features.json").read_text())
    assert man["input_digests"]["trips"]


def test_synth_then_uplift(cohort_dir, tmp_path):
    args = ["uplift", "--data", str(cohort_dir / "data"), "--split", "overall",
            "--config", str(cohort_dir / "quick.toml"), "--out", str(tmp_path), "--seed", "3"]
    assert main(args) == 0
    with open(tmp_path / "uplift_report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * 4 * 4
    first = (tmp_path / "uplift_report.csv").read_bytes()
    run1 = json.loads((tmp_path / "run_manifest_uplift.json").read_text())
    assert main(args) == 0
    run2 = json.loads((tmp_path / "run_manifest_uplift.json").read_text())
    assert (tmp_path / "uplift_report.csv").read_bytes() == first
    assert run1["run_id"] == run2["run_id"]
    assert run1["outputs"]["uplift_report.csv"] == run2["outputs"]["uplift_report.csv"]


def test_mtvst_and_train_and_stats(cohort_dir, tmp_path):
    common = ["--data", str(cohort_dir / "data"), "--config", str(cohort_dir / "quick.toml")]
    assert main(["mtvst", *common, "--fractions", "1.0,0.1", "--tasks", "age,income",
                 "--out", str(tmp_path / "m")]) == 0
    with open(tmp_path / "m" / "mtvst_report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["setting"] for r in rows} == {"1.0", "0.1"}
    assert len(rows) == 2 * 2 * 2 * 4
    assert main(["train", *common, "--model", "st", "--tasks", "children",
                 "--out", str(tmp_path / "t")]) == 0
    assert main(["stats", *common, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "spearman.csv").exists()


def test_cross_split_without_2023_is_a_data_error(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"n_households": 20, "waves": {"2017": 0.5, "2019": 0.5}}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "d")]) == 0
    tmp_path.joinpath("q.toml").write_text(QUICK_CONFIG)
    assert main(["uplift", "--data", str(tmp_path / "d"), "--split", "cross",
                 "--config", str(tmp_path / "q.toml"), "--out", str(tmp_path / "o")]) == 2


def test_evaluate_hand_built_dump(tmp_path):
    dump = tmp_path / "pred.csv"
    dump.write_text("y_true,p0,p1\n1,0.1,0.9\n0,0.2,0.8\n1,0.8,0.2\n")
    assert main(["evaluate", "--predictions", str(dump), "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())["all"]
    assert m["accuracy"] == pytest.approx(1 / 3)
    assert m["auroc"] == pytest.approx(0.5)
    assert m["nll"] == pytest.approx(-(math.log(0.9) + 2 * math.log(0.2)) / 3)
    # 0.9 sits alone in its bin (gap 0.1); both 0.8 rows are wrong (gap 0.8)
    assert m["ece"] == pytest.approx((0.1 + 2 * 0.8) / 3)


def test_evaluate_rejects_bad_dump(tmp_path):
    dump = tmp_path / "pred.csv"
    dump.write_text("label,score\n1,0.3\n")
    assert main(["evaluate", "--predictions", str(dump), "--out", str(tmp_path)]) == 2
