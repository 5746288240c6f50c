import csv
import io
import json

import pytest

from horizon_prophet import cli
from horizon_prophet.cli import COLUMNS, main


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_single_mhr_example(capsys):
    assert main(["single-mhr", "--horizon", "geometric", "--mean", "2", "--trials", "100000", "--seed", "7"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 1
    row = rows[0]
    assert float(row["bound"]) == pytest.approx(1.5)
    assert float(row["ratio"]) <= 1.5 + 3 * float(row["ratio_stderr"])
    assert float(row["alg"]) == pytest.approx(7 / 3, abs=3 * float(row["alg_stderr"]))
    assert row["pass"] == "true"


def test_walk_table_example(capsys):
    assert main(["walk-table", "--j", "1,3", "--x", "0.5"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert [float(r["value"]) for r in rows] == [0.5, 0.625]


def test_ratio_curve_example(capsys):
    assert main(["ratio-curve", "--alpha", "2", "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["value"] == pytest.approx(1.5708, abs=1e-4)
    assert rows[1]["value"] == pytest.approx(2.0)
    assert list(rows[0]) == list(COLUMNS)


def test_header_order(capsys):
    main(["walk-table", "--j", "2"])
    assert capsys.readouterr().out.splitlines()[0] == ",".join(COLUMNS)


def test_identical_runs_write_identical_files(tmp_path):
    args = ["multi-mhr", "--m", "12", "--mean", "4", "--values", "uniform:1:10", "--trials", "300", "--seed", "5"]
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert main(args + ["--out", str(c), "--threads", "3"]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("experiment: walk-table\nj: [2, 4]\nx: 0.25\n")
    assert main(["--config", str(cfg)]) == 0
    assert len(_csv(capsys.readouterr().out)) == 2
    assert main(["--config", str(cfg), "--j", "5"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 1 and rows[0]["label"] == "j=5 x=0.25"


def test_unknown_config_key_is_an_error(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("experiment: walk-table\nbogus: 1\n")
    assert main(["--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["nope"], [], ["single-mhr", "--trials", "1"], ["single-mhr", "--values", "weird"]])
def test_bad_invocations_exit_one(argv, capsys):
    assert main(argv) == 1


def test_env_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    assert main(["ratio-curve", "--alpha", "2,3", "--format", "json"]) == 0
    rows = json.loads((tmp_path / "ratio-curve.json").read_text())
    assert len(rows) == 4


def test_failed_check_exits_two(monkeypatch, capsys):
    def failing(cfg):
        return [cli._row(cfg, "forced", value=1.0, bound=0.0, **{"pass": False})]

    monkeypatch.setitem(cli.RUNNERS, "walk-table", failing)
    assert main(["walk-table"]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["sosd-check", "--horizon", "uniform", "--mean", "5"],
        ["stage-plan", "--m", "40", "--mean", "2"],
        ["general-horizon-gap", "--c", "1", "--trials", "2000"],
        ["geometric-lb", "--m", "1", "--lam", "0.001", "--trials", "2000"],
        ["fixed-price-gap", "--m", "32,1024", "--trials", "400"],
        ["vpro-verify", "--instances", "2", "--trials", "500"],
    ],
)
def test_other_experiments_run(argv, capsys):
    code = main(argv)
    rows = _csv(capsys.readouterr().out)
    assert code == 0 and rows
    for r in rows:
        json.loads(r["params"])


def test_every_row_carries_seed_and_trials(capsys):
    main(["stage-plan", "--m", "40", "--mean", "2", "--seed", "3"])
    for r in _csv(capsys.readouterr().out):
        assert r["seed"] == "3" and r["trials"] and r["experiment"] == "stage-plan"
