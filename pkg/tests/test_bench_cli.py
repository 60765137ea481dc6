import csv
import io
import json

import pytest

from pdpt.bench import COLUMNS, load_suite_config, run_benchmark, tw_labels
from pdpt.cli import main
from pdpt.generator import generate_instance, tiny_params
from pdpt.milp.oracle import exact_oracle_solve
from pdpt.model import load_instance, save_instance
from pdpt.routing import Solution, load_solution, save_solution
from pdpt.search import METHODS


@pytest.fixture(scope="module")
def tiny():
    return generate_instance(tiny_params(3, "M"), 11)


def test_one_instance_three_methods(tiny):
    report = run_benchmark([tiny], METHODS, restarts=3, patience=5)
    assert [r.method for r in report.rows] == list(METHODS)
    for r in report.rows:
        assert r.best_ub <= r.avg_ub and r.restarts == 3 and r.failed == []
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert tuple(rows[0]) == COLUMNS and len(rows) == 4


def test_gap_to_oracle_is_computable(tiny):
    best = exact_oracle_solve(tiny).objective(tiny)
    row = run_benchmark([tiny], ("rlns",), restarts=2, patience=5).row(tiny.name, "rlns")
    gap = (row.best_ub - best) / row.best_ub
    assert 0.0 <= gap < 1.0


def test_rerun_gives_identical_csv(tiny):
    a = run_benchmark([tiny], METHODS, restarts=2, patience=5, seed=4).to_csv(timings=False)
    b = run_benchmark([tiny], METHODS, restarts=2, patience=5, seed=4).to_csv(timings=False)
    assert a == b


def test_worker_pool_matches_serial(tiny):
    serial = run_benchmark([tiny], ("ls",), restarts=2, patience=5).to_csv(timings=False)
    pooled = run_benchmark([tiny], ("ls",), restarts=2, patience=5, workers=2).to_csv(timings=False)
    assert serial == pooled


def test_labels_from_generated_name(tiny):
    assert tw_labels(tiny.name) == ("M", "120")
    assert tw_labels("custom") == ("", "")


def test_suite_file(tmp_path, tiny):
    save_instance(tiny, tmp_path / "a.json")
    (tmp_path / "suite.json").write_text(json.dumps({"instances": ["a.json"], "methods": ["ls"], "restarts": 2}))
    cfg = load_suite_config(tmp_path / "suite.json")
    assert cfg["methods"] == ("ls",) and cfg["restarts"] == 2 and cfg["patience"] == 50
    assert cfg["instances"][0].name == tiny.name
    (tmp_path / "bad.json").write_text(json.dumps({"instances": ["a.json"], "colour": 1}))
    with pytest.raises(ValueError):
        load_suite_config(tmp_path / "bad.json")


def test_cli_gen_then_validate(tmp_path):
    out = tmp_path / "a.json"
    assert main(["gen", "--requests", "25", "--tw", "L", "--seed", "7", "-o", str(out)]) == 0
    assert main(["validate", str(out)]) == 0
    assert len(load_instance(out).requests) == 25


def test_cli_oracle_size_guard(tmp_path, capsys):
    path = tmp_path / "six.json"
    save_instance(generate_instance(tiny_params(6, "L"), 0), path)
    assert main(["solve", str(path), "--method", "oracle"]) == 1
    assert "OracleSizeError" in capsys.readouterr().err


def test_cli_lbbd_warm_start(tmp_path, tiny, capsys):
    inst_path, lns_path = tmp_path / "i.json", tmp_path / "lns.json"
    save_instance(tiny, inst_path)
    assert main(["solve", str(inst_path), "--restarts", "2", "--patience", "5", "-o", str(lns_path)]) == 0
    capsys.readouterr()
    assert main(["solve", str(inst_path), "--method", "lbbd", "--warm-start", str(lns_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["ub"] <= doc["warm_start_cost"] + 1e-9
    assert doc["warm_start_cost"] == pytest.approx(load_solution(lns_path).objective(tiny))


def test_cli_solution_round_trip(tmp_path, tiny, capsys):
    inst_path, sol_path = tmp_path / "i.json", tmp_path / "s.json"
    save_instance(tiny, inst_path)
    assert main(["solve", str(inst_path), "--method", "ls", "--restarts", "1", "--patience", "3", "-o", str(sol_path)]) == 0
    assert main(["validate", str(inst_path), str(sol_path)]) == 0
    save_solution(tiny, Solution.empty(tiny), tmp_path / "empty.json")
    capsys.readouterr()
    assert main(["validate", str(inst_path), str(tmp_path / "empty.json")]) == 1
    assert "pdpt2" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["solve"]) == 2
    assert main(["bench"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main(["frobnicate"]) == 2


def test_cli_missing_file_and_bad_config(tmp_path, tiny):
    assert main(["validate", str(tmp_path / "nope.json")]) == 1
    save_instance(tiny, tmp_path / "i.json")
    (tmp_path / "cfg.json").write_text(json.dumps({"unknown_knob": 3}))
    assert main(["solve", str(tmp_path / "i.json"), "--config", str(tmp_path / "cfg.json")]) == 1


def test_cli_bench_and_export(tmp_path, tiny):
    save_instance(tiny, tmp_path / "i.json")
    out = tmp_path / "b.csv"
    assert main(["bench", str(tmp_path / "i.json"), "--methods", "ls", "--restarts", "2", "--patience", "3", "-o", str(out)]) == 0
    assert out.read_text().splitlines()[0] == ",".join(COLUMNS)
    for fmt in ("lp", "mps"):
        path = tmp_path / f"m.{fmt}"
        assert main(["export-model", str(tmp_path / "i.json"), "--format", fmt, "-o", str(path)]) == 0
        assert path.stat().st_size > 0


def test_average_of_equal_costs_is_not_below_best(tiny):
    from pdpt.bench import _summarise

    cost = 146.66012345  # ten copies average to slightly less than this
    row = _summarise(tiny, "ls", [(k, cost, 0.0, None) for k in range(10)])
    assert row.best_ub == cost and row.avg_ub == cost
