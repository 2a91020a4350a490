import argparse
import csv
import json

import pytest

from drillwatch.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, _workers, run
from drillwatch.welldata import well_to_csv

from conftest import make_well

FAST = ["--trees", "10", "--min-leaf", "10"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def field(tmp_path_factory):
    out = tmp_path_factory.mktemp("field")
    assert run(["synth", "--wells", "3", "--length", "60", "--seed", "7", "-o", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def evaluation(field, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    assert run(["evaluate", "-i", str(field), "-o", str(out), *FAST]) == EXIT_OK
    return out


class TestSynth:
    def test_writes_wells_and_manifest(self, tmp_path):
        assert run(["synth", "--wells", "5", "--seed", "7", "--length", "20", "-o", str(tmp_path)]) == EXIT_OK
        assert len(list(tmp_path.glob("synth-*.csv"))) == 5
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["config"]["synth"]["n_wells"] == 5
        assert {"numpy", "scipy", "numba", "python"} <= set(manifest["versions"])

    def test_deterministic(self, field, tmp_path):
        run(["synth", "--wells", "3", "--length", "60", "--seed", "7", "-o", str(tmp_path)])
        for f in field.glob("synth-*.csv"):
            assert (tmp_path / f.name).read_bytes() == f.read_bytes()


class TestUsage:
    def test_missing_input_flag(self, capsys):
        assert run(["train", "-o", "model.json"]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_nonexistent_input(self, tmp_path, capsys):
        assert run(["train", "-i", str(tmp_path / "nope.csv"), "-o", str(tmp_path / "m.json")]) == EXIT_USAGE
        assert "does not exist" in capsys.readouterr().err

    def test_unknown_detector(self, tmp_path):
        assert run(["detect", "-i", "x.csv", "-o", "y.csv", "--detector", "magic"]) == EXIT_USAGE

    def test_bad_worker_env(self, field, tmp_path, monkeypatch):
        monkeypatch.setenv("DRILLWATCH_WORKERS", "many")
        assert run(["evaluate", "-i", str(field), "-o", str(tmp_path), *FAST]) == EXIT_USAGE

    def test_help(self, capsys):
        assert run(["--help"]) == EXIT_OK


class TestTrainDetect:
    def test_train_then_detect(self, field, tmp_path):
        model = tmp_path / "model.json"
        wells = sorted(field.glob("synth-*.csv"))
        assert run(["train", "-i", str(wells[0]), str(wells[1]), "-o", str(model), *FAST]) == EXIT_OK
        assert json.loads(model.read_text())["version"] == "v1"
        assert (tmp_path / "model.json.manifest.json").exists()
        out = tmp_path / "det.csv"
        assert run(["detect", "-i", str(wells[2]), "--model", str(model), "-o", str(out),
                    "--detector", "cusum", "--threshold-to-shale", "5", "--threshold-to-sand", "5"]) == EXIT_OK
        table = rows(out)
        assert list(table[0])[:5] == ["depth", "prob", "raw_label", "corrected_label", "event"]
        assert len(table) == 600
        events = [r["event"] for r in table if r["event"]]
        assert set(events) <= {"sand->shale", "shale->sand"}

    def test_detect_probability_csv(self, tmp_path):
        src = tmp_path / "p.csv"
        src.write_text("depth,prob\n" + "".join(f"{1800 + i / 10:.1f},{0.1 if i < 50 else 0.9}\n"
                                                for i in range(100)))
        out = tmp_path / "d.csv"
        assert run(["detect", "-i", str(src), "-o", str(out), "--detector", "ctl", "--thin-w", "5"]) == EXIT_OK
        table = rows(out)
        assert [r["event"] for r in table if r["event"]] == ["sand->shale"]
        assert table[50]["corrected_label"] == "shale"

    def test_detect_bad_probability(self, tmp_path):
        src = tmp_path / "p.csv"
        src.write_text("depth,prob\n1800.0,1.5\n")
        assert run(["detect", "-i", str(src), "-o", str(tmp_path / "d.csv")]) == EXIT_DATA


class TestEvaluate:
    def test_outputs(self, evaluation):
        table = rows(evaluation / "metrics.csv")
        assert [r["well_id"] for r in table] == ["synth-000", "synth-001", "synth-002", "aggregate:median",
                                                 "aggregate:mean", "aggregate:std"]
        assert len((evaluation / "reports.jsonl").read_text().splitlines()) == 3
        assert len(list((evaluation / "predictions").glob("*.csv"))) == 3
        assert rows(evaluation / "difficulty.csv")[0].keys() == {"bin_lo", "bin_hi", "identified_count",
                                                                 "unidentified_count"}
        audit = json.loads((evaluation / "manifest.json").read_text())["config"]["audit"]
        assert all(wid not in train for wid, train in audit.items())

    def test_one_well(self, field, tmp_path, capsys):
        code = run(["evaluate", "-i", str(next(field.glob("synth-000.csv"))), "-o", str(tmp_path), *FAST])
        assert code == EXIT_DATA
        assert "need ≥ 2 wells" in capsys.readouterr().err

    def test_replay_reproduces(self, evaluation, tmp_path):
        assert run(["replay", str(evaluation / "manifest.json"), "-o", str(tmp_path)]) == EXIT_OK
        for name in ("metrics.csv", "reports.jsonl", "difficulty.csv"):
            assert (tmp_path / name).read_bytes() == (evaluation / name).read_bytes()

    def test_grid_search(self, field, tmp_path):
        assert run(["grid-search", "-i", str(field), "-o", str(tmp_path), "--grid-thin-w", "5,15,45",
                    *FAST]) == EXIT_OK
        table = rows(tmp_path / "leaderboard.csv")
        assert [r["rank"] for r in table] == ["1", "2", "3"]
        assert list(table[0]) == ["rank", "kind", "thin_w", "acc_n_median", "fp_median", "delay_mean"]


class TestReport:
    def test_bundle(self, evaluation, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["report", "-i", str(evaluation), "-o", str(a)]) == EXIT_OK
        assert run(["report", "-i", str(evaluation), "-o", str(b)]) == EXIT_OK
        for f in a.rglob("*.csv"):
            if f.is_file():
                assert (b / f.relative_to(a)).read_bytes() == f.read_bytes()
        track = rows(a / "tracks" / "synth-000.csv")
        assert list(track[0]) == ["depth", "true_label", "prob", "raw_label", "corrected_label"]
        assert len(rows(a / "difficulty_histogram.csv")) == 10

    def test_from_detect_output(self, tmp_path):
        src = tmp_path / "p.csv"
        src.write_text("depth,prob\n" + "".join(f"{1800 + i / 10:.1f},0.2\n" for i in range(30)))
        det = tmp_path / "d.csv"
        run(["detect", "-i", str(src), "-o", str(det)])
        assert run(["report", "-i", str(det), "-o", str(tmp_path / "r")]) == EXIT_OK
        assert len(rows(tmp_path / "r" / "d_tracks.csv")) == 30

    def test_without_density(self, tmp_path, capsys):
        field = tmp_path / "field"
        field.mkdir()
        for i in range(2):
            well = make_well([(t // 40 + i) % 2 for t in range(200)], well_id=f"w{i}", seed=i)
            (field / f"w{i}.csv").write_text(well_to_csv(well))
        ev = tmp_path / "ev"
        assert run(["evaluate", "-i", str(field), "-o", str(ev), "--trees", "3", "--min-leaf", "5"]) == EXIT_OK
        assert "no density" in capsys.readouterr().err
        rep = tmp_path / "rep"
        assert run(["report", "-i", str(ev), "-o", str(rep)]) == EXIT_OK
        assert not (rep / "difficulty_histogram.csv").exists()
        assert "histogram not written" in capsys.readouterr().err

    def test_missing_inputs(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run(["report", "-i", str(tmp_path / "empty"), "-o", str(tmp_path / "r")]) == EXIT_DATA


def test_preprocess(field, tmp_path):
    assert run(["preprocess", "-i", str(field), "-o", str(tmp_path)]) == EXIT_OK
    header = (tmp_path / "synth-000.csv").read_text().splitlines()[0].split(",")
    assert header[-3:] == ["apr", "sed", "lithotype"]


def test_worker_env_fallback(field, evaluation, tmp_path, monkeypatch):
    monkeypatch.setenv("DRILLWATCH_WORKERS", "2")
    assert run(["evaluate", "-i", str(field), "-o", str(tmp_path), *FAST]) == EXIT_OK
    assert _workers(argparse.Namespace(workers=None)) == 2
    assert _workers(argparse.Namespace(workers=3)) == 3
    assert (tmp_path / "metrics.csv").read_bytes() == (evaluation / "metrics.csv").read_bytes()


def test_manifest_has_no_clock(evaluation):
    text = (evaluation / "manifest.json").read_text()
    assert "time" not in text and "date" not in text
