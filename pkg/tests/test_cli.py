import json
import os

import numpy as np
import pytest
import yaml

from fcfl import cli, records
from fcfl.cli import ConfigError, execute, parse_config

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
SMOOTH = {"delta_l": 0.1, "delta_g": 0.002, "eps_d": 1.0e-6, "delta_floor": 1.0e-4}
TAB_OPT = {"eta": 1.0, "max_iters_stage1": 1500, "max_iters_stage2": 300, "smoothing": SMOOTH}


def write_config(tmp_path, cfg, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def planted(**budgets):
    return {
        "config_version": 1,
        "experiment": "tabular",
        "budgets": budgets,
        "tabular": {
            "source": "planted",
            "planted": {"base_rates": [0.4, 0.5], "strengths": [0.15, 0.3], "sample_counts": [1500, 1500]},
        },
        "optimizer": TAB_OPT,
    }


def test_synthetic_run_meets_budget(tmp_path, capsys):
    out = tmp_path / "syn"
    rc = cli.main(["run", os.path.join(CONFIGS, "synthetic.yaml"), "--out", str(out)])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    (client,) = summary["clients"]
    assert client["l2"] <= 0.201
    assert summary["run_config"]["budgets"] == {"uniform": 0.2}
    assert "client" in capsys.readouterr().out


def test_missing_file_exits_three(tmp_path, capsys):
    cfg = {
        "config_version": 1,
        "experiment": "tabular",
        "budgets": {"uniform": 0.05},
        "tabular": {
            "source": "file",
            "file": {"path": "nope.csv", "schema": {"label_column": "y", "sensitive_column": "a"},
                     "split": {"key": "k"}},
        },
    }
    assert cli.main(["run", write_config(tmp_path, cfg)]) == 3
    err = capsys.readouterr().err
    assert "tabular.file.path" in err and "nope.csv" in err


def test_missing_config_exits_three(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.yaml")]) == 3


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"config_version": 2}, "config_version"),
        ({"experiment": "images"}, "experiment"),
        ({"budgets": {"uniform": 0.1, "client_specific": {}}}, "budgets"),
        ({"budgets": {"uniform": -1}}, "budgets.uniform"),
        ({"metric": "odds"}, "metric"),
        ({"optimizer": {"eta": -1}}, "optimizer"),
        ({"optimizer": {"bogus": 1}}, "optimizer"),
        ({"extra": 1}, "extra"),
        ({"tabular": {"source": "sql"}}, "tabular.source"),
    ],
)
def test_config_errors_name_field(patch, field):
    raw = {**planted(uniform=0.05), **patch}
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.field == field
    assert f"'{field}'" in str(err.value)


def test_empty_w_list_is_config_error(tmp_path, capsys):
    path = write_config(tmp_path, planted(client_specific={"w": 1.0}))
    assert cli.main(["budget-sweep", path, "--w", "--out", str(tmp_path / "o")]) == 3
    assert "--w" in capsys.readouterr().err


def test_rerun_is_byte_identical_and_replayable(tmp_path):
    path = os.path.join(CONFIGS, "planted_two.yaml")
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["run", path, "--out", str(a)])
    cli.main(["run", path, "--out", str(b)])
    assert (a / "trajectory.jsonl").read_bytes() == (b / "trajectory.jsonl").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    replay = execute(parse_config(summary["run_config"], CONFIGS), CONFIGS)
    assert replay.theta == summary["theta"]
    for rec in records.read_jsonl(a / "trajectory.jsonl"):
        records.validate(rec)
    records.validate(summary)


def test_seed_override_changes_data(tmp_path):
    path = os.path.join(CONFIGS, "planted_two.yaml")
    cli.main(["run", path, "--out", str(tmp_path / "s0"), "--seed", "0"])
    cli.main(["run", path, "--out", str(tmp_path / "s1"), "--seed", "1"])
    s0 = json.loads((tmp_path / "s0" / "summary.json").read_text())
    s1 = json.loads((tmp_path / "s1" / "summary.json").read_text())
    assert s0["run_config"]["seed"] == 0 and s1["run_config"]["seed"] == 1
    assert s0["theta"] != s1["theta"]


def test_file_source_run(tmp_path):
    out = tmp_path / "file"
    assert cli.main(["run", os.path.join(CONFIGS, "sample_table.yaml"), "--out", str(out)]) in (0, 2)
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["clients"]) == 2
    assert len(summary["extra"]["test_clients"]) == 2


def test_identical_mode_compare_rows_match(tmp_path):
    cfg = planted(uniform=0.05)
    cfg["compare"] = {"modes": ["fcfl", "fcfl"]}
    out = tmp_path / "cmp"
    assert cli.main(["compare", write_config(tmp_path, cfg), "--out", str(out)]) == 0
    rows = records.read_jsonl(out / "comparison.jsonl")
    for r in rows:
        records.validate(r)
    first = [{k: v for k, v in r.items() if k != "run"} for r in rows if r["run"] == 0]
    second = [{k: v for k, v in r.items() if k != "run"} for r in rows if r["run"] == 1]
    assert first == second and len(first) == 2


def test_synthetic_pair_compare(tmp_path, capsys):
    out = tmp_path / "pair"
    assert cli.main(["compare", os.path.join(CONFIGS, "synthetic_pair.yaml"), "--out", str(out)]) == 0
    rows = records.read_jsonl(out / "comparison.jsonl")
    fc = [r["loss"] for r in rows if r["mode"] == "fcfl"]
    base = [r["loss"] for r in rows if r["mode"] == "fedave_fairreg"]
    assert abs(fc[0] - fc[1]) <= 1e-2
    assert abs(base[0] - base[1]) >= 0.5
    assert "fedave_fairreg" in capsys.readouterr().out


def test_budget_sweep_trend(tmp_path):
    out = tmp_path / "sweep"
    path = write_config(tmp_path, planted(client_specific={"w": 1.0}))
    rc = cli.main(["budget-sweep", path, "--w", "1.0", "0.6", "0.2", "--out", str(out)])
    rows = records.read_jsonl(out / "sweep.jsonl")
    assert [r["w"] for r in rows] == [1.0, 0.6, 0.2]
    hard = [r["max_hard_disparity"] for r in rows]
    assert all(b <= a + 0.01 for a, b in zip(hard, hard[1:]))
    assert rc == 0 and not any(r["mcf_violated"] for r in rows)
    w1 = json.loads((out / "w_1" / "summary.json").read_text())
    assert w1["run_config"]["budgets"]["client_specific"]["w"] == 1.0


def test_sweep_workers_match_serial(tmp_path):
    path = write_config(tmp_path, planted(client_specific={"w": 1.0}))
    cli.main(["budget-sweep", path, "--w", "0.5", "--out", str(tmp_path / "one")])
    cli.main(["budget-sweep", path, "--w", "0.5", "--out", str(tmp_path / "two"), "--workers", "2"])
    assert (tmp_path / "one" / "sweep.jsonl").read_bytes() == (tmp_path / "two" / "sweep.jsonl").read_bytes()


def test_client_specific_baseline_reference(tmp_path):
    ref = tmp_path / "base.jsonl"
    records.write_jsonl(ref, [{"record": "summary", "clients": [{"soft_disparity": 0.2}, {"soft_disparity": 0.1}]}])
    cfg = parse_config(planted(client_specific={"w": 0.5, "baseline_run_ref": "base.jsonl"}), str(tmp_path))
    assert np.allclose(cli._client_specific_budgets(cfg, str(tmp_path), 0.5), [0.1, 0.05])
