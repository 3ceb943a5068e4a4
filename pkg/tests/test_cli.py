import json
import subprocess
import sys

import numpy as np
import pytest

from dosequiv.cli import main

from conftest import CASE_STUDY_CSV, CONFIG_DIR, SCENARIO_DIR

DESIGN = {
    "doses": [0, 1, 2, 3, 4],
    "allocations": [[12, 12, 12, 11, 11], [29, 28, 28, 28, 28], [34, 34, 34, 34, 34]],
    "weights": [1 / 7, 3 / 7, 3 / 7],
    "labels": ["J", "A", "E"],
}
FAMILIES = [{"family": "emax_fixed_hill", "hill": 1.0}] * 3


def write_config(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def read_json_no_timestamp(path):
    doc = json.loads(path.read_text())
    doc.pop("created_utc", None)
    return doc


def test_fit_command(tmp_path):
    cfg = write_config(tmp_path, "fit.json", {"schema_version": 1, "design": DESIGN, "families": FAMILIES})
    out = tmp_path / "fit_out.json"
    code = main(["fit", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["curves"]["doses"]) == 101
    assert {f["label"] for f in doc["fits"]} == {"J", "A", "E"}
    params = np.asarray(doc["fits"][0]["params"])
    assert np.allclose(params, [0.38, 0.66, 3.94], atol=1e-4)
    assert doc["fits"][2]["sigma2"] == pytest.approx(0.72, abs=0.02)


def test_malformed_json_exit_2(tmp_path, capsys):
    cfg = tmp_path / "broken.json"
    cfg.write_text('{"schema_version": 1,,}')
    code = main(["fit", "--config", str(cfg), "--data", str(CASE_STUDY_CSV)])
    assert code == 2
    err = capsys.readouterr().err
    assert "line" in err and "column" in err


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = write_config(
        tmp_path, "weird.json",
        {"schema_version": 1, "design": DESIGN, "families": FAMILIES, "surprise": True},
    )
    code = main(["fit", "--config", str(cfg), "--data", str(CASE_STUDY_CSV)])
    assert code == 2
    assert "surprise" in capsys.readouterr().err


def test_wrong_schema_version_exit_2(tmp_path):
    cfg = write_config(tmp_path, "old.json", {"schema_version": 99, "design": DESIGN, "families": FAMILIES})
    assert main(["fit", "--config", str(cfg), "--data", str(CASE_STUDY_CSV)]) == 2


def test_data_validation_exit_3(tmp_path, capsys):
    cfg = write_config(tmp_path, "fit.json", {"schema_version": 1, "design": DESIGN, "families": FAMILIES})
    bad = tmp_path / "bad.csv"
    bad.write_text("subgroup,dose,response\n1,7,0.5\n")
    code = main(["fit", "--config", str(cfg), "--data", str(bad)])
    assert code == 3
    assert "dose 7" in capsys.readouterr().err


def test_test_command_smoke(tmp_path):
    doc = {
        "schema_version": 1, "design": DESIGN, "families": FAMILIES,
        "test": {"target": {"kind": "one", "subgroup": 1}, "delta": 0.5,
                 "alpha": [0.05, 0.1], "b": 25, "seed": 9},
    }
    cfg = write_config(tmp_path, "test.json", doc)
    out = tmp_path / "test_out.json"
    code = main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(out)])
    assert code == 0
    res = json.loads(out.read_text())
    assert res["mode"] == "one"
    assert set(res["quantiles"]) == {"0.05", "0.1"}
    assert set(res["reject"]) == {"0.05", "0.1"}
    assert res["statistic"] == pytest.approx(2.37 / 7, abs=1e-4)
    assert 0.0 <= res["p_value"] <= 1.0


def test_test_command_b1_smoke(tmp_path):
    doc = {
        "schema_version": 1, "design": DESIGN, "families": FAMILIES,
        "test": {"target": {"kind": "many", "subgroups": [1, 2, 3]}, "delta": 0.5,
                 "alpha": 0.1, "b": 1, "seed": 9},
    }
    cfg = write_config(tmp_path, "t1.json", doc)
    out = tmp_path / "t1_out.json"
    assert main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["p_value"] in (0.0, 1.0)


def test_seed_flag_overrides_config(tmp_path):
    doc = {
        "schema_version": 1, "design": DESIGN, "families": FAMILIES,
        "test": {"target": {"kind": "one", "subgroup": 1}, "delta": 0.5,
                 "alpha": 0.1, "b": 10, "seed": 9, "include_values": True},
    }
    cfg = write_config(tmp_path, "t.json", doc)
    out1, out2 = tmp_path / "o1.json", tmp_path / "o2.json"
    main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(out1)])
    main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(out2), "--seed", "10"])
    a = json.loads(out1.read_text())
    b = json.loads(out2.read_text())
    assert a["seed"] == 9 and b["seed"] == 10
    assert a["values_sorted"] != b["values_sorted"]


def test_reproducible_across_workers_and_reruns(tmp_path):
    doc = {
        "schema_version": 1, "design": DESIGN, "families": FAMILIES,
        "test": {"target": {"kind": "one", "subgroup": 2}, "delta": 0.5,
                 "alpha": 0.1, "b": 16, "seed": 4, "include_values": True},
    }
    cfg = write_config(tmp_path, "t.json", doc)
    outs = [tmp_path / f"o{i}.json" for i in range(3)]
    main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(outs[0]), "--workers", "1"])
    main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(outs[1]), "--workers", "2"])
    main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(outs[2]), "--workers", "1"])
    docs = [read_json_no_timestamp(o) for o in outs]
    assert docs[0] == docs[1] == docs[2]


def test_calibrate_command(tmp_path):
    doc = {
        "schema_version": 1, "design": DESIGN, "families": FAMILIES,
        "calibrate": {"target": {"kind": "one", "subgroup": 1}, "alpha": 0.1,
                      "b": 20, "seed": 3, "deltas": [0.2, 0.5, 0.9]},
    }
    cfg = write_config(tmp_path, "cal.json", doc)
    out = tmp_path / "curve.csv"
    code = main(["calibrate", "--config", str(cfg), "--data", str(CASE_STUDY_CSV), "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "delta,statistic,quantile,p_value,reject"
    assert len(lines) == 4
    # A threshold far above the statistic scale rejects with p near zero.
    last = lines[-1].split(",")
    assert last[4] == "1"
    summary = json.loads((tmp_path / "curve.csv.summary.json").read_text())
    assert summary["delta_hat"] is None or summary["delta_hat"] in (0.2, 0.5, 0.9)


def test_simulate_command(tmp_path):
    out = tmp_path / "table.csv"
    code = main([
        "simulate", "--config", str(SCENARIO_DIR / "scenario_a_one.json"),
        "--out", str(out), "--nsim", "2", "--b", "10", "--seed", "1",
        "--rows", "(25, 0.47)",
    ])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 2
    assert lines[1].startswith('A,"(25, 0.47)",')


def test_asymp_command(tmp_path):
    out = tmp_path / "samples.json"
    code = main([
        "asymp", "--config", str(CONFIG_DIR / "case_study_asymp.json"), "--out", str(out),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["distance"] == pytest.approx(2.37 / 7, abs=1e-6)
    assert doc["extremal_plus"] == [[1, 0.0]]
    assert doc["quantiles"]["0.1"] < 0.0
    assert not doc["continuity_unverified"]


def test_asymp_deterministic(tmp_path):
    outs = [tmp_path / f"s{i}.json" for i in range(2)]
    for o in outs:
        main(["asymp", "--config", str(CONFIG_DIR / "case_study_asymp.json"), "--out", str(o)])
    assert read_json_no_timestamp(outs[0]) == read_json_no_timestamp(outs[1])


def test_infeasible_constraint_exit_4(tmp_path, capsys):
    # Tightly boxed constant curves cannot reach a huge threshold.
    tight = {"family": "emax_fixed_hill", "hill": 1.0,
             "bounds": [[-0.1, 0.1], [0.0, 0.0], [1.0, 1.0]]}
    doc = {
        "schema_version": 1, "design": DESIGN, "families": [tight] * 3,
        "test": {"target": {"kind": "one", "subgroup": 1}, "delta": 5.0,
                 "alpha": 0.1, "b": 5, "seed": 1},
    }
    cfg = write_config(tmp_path, "infeasible.json", doc)
    code = main(["test", "--config", str(cfg), "--data", str(CASE_STUDY_CSV)])
    assert code == 4
    assert "estimation error" in capsys.readouterr().err


def test_module_entrypoint_runs():
    import os

    from conftest import REPO_ROOT

    env = dict(os.environ, PYTHONPATH=str(REPO_ROOT / "src"))
    proc = subprocess.run(
        [sys.executable, "-m", "dosequiv.cli", "--version"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert "dosequiv" in proc.stdout


def test_stdout_mode_prints_json(tmp_path, capsys):
    cfg = write_config(tmp_path, "fit.json", {"schema_version": 1, "design": DESIGN, "families": FAMILIES})
    code = main(["fit", "--config", str(cfg), "--data", str(CASE_STUDY_CSV)])
    assert code == 0
    out = capsys.readouterr().out
    assert json.loads(out)["command"] == "fit"
