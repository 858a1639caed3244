from __future__ import annotations

import csv
import io

import pytest

from amsp.cli import EXIT_GUARD, EXIT_PARAM, main
from amsp.harness import ExperimentConfig, GuardExceeded, ParameterError, cmd_enumerate_revisions


def _rows(text):
    """Per-run rows; the summary block after the blank line is skipped."""
    return list(csv.DictReader(io.StringIO(text.split("\n\n")[0])))


def test_count_nacs_table(capsys):
    assert main(["count-nacs", "-T", "5", "-B", "2", "--mu", "2"]) == 0
    out = capsys.readouterr().out
    assert "total,44" in out.replace(" ", "")


def test_count_nacs_full_t10(capsys):
    assert main(["count-nacs", "-T", "10", "-B", "2", "--regime", "full"]) == 0
    assert "688810" in capsys.readouterr().out


def test_bad_parameters_exit_2(capsys):
    assert main(["count-nacs", "-T", "4", "-B", "0"]) == EXIT_PARAM
    assert main(["count-nacs", "-T", "4", "-B", "2", "--mu", "4"]) == EXIT_PARAM
    assert main(["solve", "-T", "3", "--mu", "7"]) == EXIT_PARAM
    assert main(["nonsense"]) == EXIT_PARAM
    assert main(["solve", "--override", "novalue"]) == EXIT_PARAM


def test_gen_and_solve_file(tmp_path, capsys):
    path = tmp_path / "ls.json"
    assert main(["gen", "-T", "3", "-B", "2", "-I", "2", "--seed", "4", "--json", str(path)]) == 0
    capsys.readouterr()
    assert main(["solve", "--instance", str(path), "--mu", "0", "2", "--method", "direct-reduced"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert [r["mu"] for r in rows] == ["0", "2"]
    assert float(rows[0]["objective"]) >= float(rows[1]["objective"])


def test_solve_decomposition_writes_log(tmp_path, capsys):
    log = tmp_path / "log.csv"
    code = main(["solve", "-T", "3", "-B", "2", "--mu", "1", "--method", "decomposition", "--exact",
                 "--log", str(log)])
    assert code == 0
    assert _rows(capsys.readouterr().out)[0]["status"] == "optimal"
    assert log.read_text().startswith("iteration,lb,ub")


def test_vams_sweep_endpoints(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["vams-sweep", "-T", "3", "-B", "2", "--seed", "1", "2", "--out", str(out)]) == 0
    rows = _rows(out.read_text())
    for seed in ("1", "2"):
        mine = [r for r in rows if r["seed"] == seed]
        first = 100.0 if mine[0]["degenerate"] == "True" else 0.0
        assert float(mine[0]["vams"]) == pytest.approx(first, abs=1e-6)
        assert float(mine[-1]["vams"]) == pytest.approx(100.0, abs=1e-6)
        assert mine[0]["config_hash"] == mine[-1]["config_hash"]


def test_compare_methods_agree(capsys):
    assert main(["compare", "-T", "3", "-B", "2", "--mu", "1", "--exact"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert {r["method"] for r in rows} >= {"direct-full", "direct-reduced", "decomposition"}
    assert all(r["agrees"] == "True" for r in rows)


def test_gep_override_via_cli(capsys):
    args = ["solve", "--problem", "gep", "-T", "2", "-B", "2", "--mu", "1",
            "--override", "penalty_per_mwh=20000"]
    assert main(args) == 0
    assert main(args[:-1] + ["bogus_knob=1"]) == EXIT_PARAM


def test_enumeration_guard(capsys):
    assert main(["enumerate-revisions", "-T", "10", "-I", "3", "--mu", "4"]) == EXIT_GUARD
    with pytest.raises(GuardExceeded):
        cmd_enumerate_revisions(ExperimentConfig(T=5, I=2, mu=[2]), guard=10)


def test_enumeration_report_agrees():
    rep = cmd_enumerate_revisions(ExperimentConfig(T=4, I=1, mu=[1, 2], seeds=[3]))
    assert [s["schedules"] for s in rep.summary] == [3, 3]
    assert all(s["agree"] for s in rep.summary)
    assert all(any(r["best"] for r in rep.rows if r["mu"] == mu) for mu in (1, 2))


def test_config_validation():
    with pytest.raises(ParameterError):
        ExperimentConfig(methods=["magic"]).validate()
    with pytest.raises(ParameterError):
        ExperimentConfig(seeds=[]).validate()
    assert ExperimentConfig(T=3).mu_values() == [0, 1, 2]
    assert ExperimentConfig().config_hash() == ExperimentConfig().config_hash()
    assert ExperimentConfig().config_hash() != ExperimentConfig(T=5).config_hash()
