from __future__ import annotations

from pathlib import Path
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import orjson
import pytest

from pmindex.presentation.cli import main


def test_durability_command_passes():
    assert main(["durability", "--index", "clht", "--n", "200"]) == 0


def test_durability_command_reports_a_mutation(tmp_path):
    out = tmp_path / "dur.json"
    code = main(
        ["durability", "--index", "clht", "--n", "50", "--mutation", "clht_skip_insert_persist", "--report", str(out)]
    )
    assert code == 1
    assert orjson.loads(out.read_bytes())["passed"] is False


def test_rejected_workload_exits_with_2():
    assert main(["bench", "--index", "clht", "--workload", "e", "--n", "100"]) == 2


def test_bench_prints_a_report(capsys):
    assert main(["bench", "--index", "art", "--workload", "a", "--n", "200", "--threads", "1"]) == 0
    data = orjson.loads(capsys.readouterr().out)
    assert data["passed"] is True
    assert [row["phase"] for row in data["rows"]] == ["load", "run"]


def test_bench_writes_csv_and_metrics(tmp_path):
    out, prom = tmp_path / "r.csv", tmp_path / "m.prom"
    code = main(
        ["bench", "--index", "bwtree", "--workload", "b", "--n", "200", "--threads", "2"]
        + ["--format", "csv", "--report", str(out), "--metrics", str(prom)]
    )
    assert code == 0
    assert out.read_text().startswith("index,pattern,phase")
    assert "pmindex_ops_per_second" in prom.read_text()


def test_crashtest_writes_a_passing_report(tmp_path):
    out = tmp_path / "campaign.json"
    code = main(
        ["crashtest", "--index", "clht", "--states", "3", "--load-n", "40", "--test-ops", "20", "--threads", "2"]
        + ["--seed", "5", "--report", str(out)]
    )
    assert code == 0
    report = orjson.loads(out.read_bytes())
    assert report["passed"] is True
    assert report["states"] == 3


def test_crashtest_targets_one_store_site(tmp_path):
    out = tmp_path / "campaign.json"
    args = ["crashtest", "--index", "clht", "--states", "2", "--load-n", "30", "--test-ops", "10", "--threads", "2"]
    code = main(args + ["--crash-site", "clht.key", "--crash-probability", "1.0", "--report", str(out)])
    assert code == 0
    report = orjson.loads(out.read_bytes())
    assert report["site_coverage"] == {"clht.key": 2}
    assert main(args + ["--keys", "string", "--key-alphabet", "3"]) == 2


def test_bad_arguments_exit_through_argparse():
    with pytest.raises(SystemExit) as e:
        main(["bench", "--index", "btree"])
    assert e.value.code == 2


def test_project_file_declares_the_entry_point():
    data = tomllib.loads((Path(__file__).resolve().parents[1] / "pyproject.toml").read_text())
    assert data["project"]["scripts"]["pmindex"] == "pmindex.presentation.cli:main"
    assert re.search(data["tool"]["black"]["include"], "pmindex/presentation/cli.py")
