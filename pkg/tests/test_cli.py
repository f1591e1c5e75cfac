"""Tests for the batch front-end: config handling, validation reports,
output files, exit codes, and determinism of the written artifacts."""

import csv
import json

import numpy as np
import pytest

from causalmix.cli import (
    RunConfig,
    load_run_config,
    main,
    read_table,
    validate_config,
)


# ------------------------------------------------------------- CSV input

def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_read_table_roundtrip(tmp_path):
    p = _write(tmp_path / "t.csv", "a,b\n1,2.5\n-3,4e-1\n")
    header, data = read_table(p)
    assert header == ["a", "b"]
    assert np.allclose(data, [[1.0, 2.5], [-3.0, 0.4]])


def test_read_table_rejects_missing_value(tmp_path):
    p = _write(tmp_path / "t.csv", "a,b\n1,\n")
    with pytest.raises(ValueError, match="missing value"):
        read_table(p)


def test_read_table_rejects_nonnumeric(tmp_path):
    p = _write(tmp_path / "t.csv", "a,b\n1,x\n")
    with pytest.raises(ValueError, match="non-numeric"):
        read_table(p)


def test_read_table_rejects_nan(tmp_path):
    p = _write(tmp_path / "t.csv", "a,b\n1,nan\n")
    with pytest.raises(ValueError, match="non-finite"):
        read_table(p)


def test_read_table_rejects_ragged_rows(tmp_path):
    p = _write(tmp_path / "t.csv", "a,b\n1,2,3\n")
    with pytest.raises(ValueError, match="expected 2 fields"):
        read_table(p)


def test_read_table_rejects_empty(tmp_path):
    p = _write(tmp_path / "t.csv", "")
    with pytest.raises(ValueError, match="header"):
        read_table(p)
    p2 = _write(tmp_path / "t2.csv", "a,b\n")
    with pytest.raises(ValueError, match="no data rows"):
        read_table(p2)


# ------------------------------------------------------------- config

def test_load_run_config_overrides(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"seed": 1, "out": "x", "parallelism": 2}))
    cfg = load_run_config("density", str(cfg_path), seed=9, threads=4,
                          out="y")
    assert cfg.seed == 9
    assert cfg.parallelism == 4
    assert cfg.out == "y"
    assert cfg.subcommand == "density"


def test_load_run_config_rejects_unknown_keys(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"sede": 1}))
    with pytest.raises(ValueError, match="unknown config keys"):
        load_run_config("density", str(cfg_path))


def test_load_run_config_rejects_non_object(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text("[1, 2]")
    with pytest.raises(ValueError, match="JSON object"):
        load_run_config("density", str(cfg_path))


# -------------------------------------------------------- validation op

def _data_csv(tmp_path, n=40, seed=0):
    rng = np.random.default_rng(seed)
    path = tmp_path / "data.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "y", "t"])
        for _ in range(n):
            w.writerow([rng.uniform(), rng.normal(), rng.integers(0, 2)])
    return str(path)


def test_validate_flags_probs_outside_unit_interval(tmp_path):
    data = _data_csv(tmp_path)
    cfg = RunConfig("qte", input=data,
                    columns={"response": "y", "treatment": "t",
                             "confounders": ["x1"]},
                    params={"probs": [0.5, 1.2]})
    report = validate_config(cfg)
    assert any("1.2" in line for line in report)


def test_validate_flags_blocked_with_one_cluster(tmp_path):
    data = _data_csv(tmp_path)
    cfg = RunConfig("density", input=data, columns={"coords": ["x1", "y"]},
                    params={"method": "blocked", "nclusters": 1})
    report = validate_config(cfg)
    assert any("nclusters" in line for line in report)


def test_validate_flags_known_without_xpred(tmp_path):
    data = _data_csv(tmp_path)
    cfg = RunConfig("qte", input=data,
                    columns={"response": "y", "treatment": "t",
                             "confounders": ["x1"]},
                    params={"rdist": "known"})
    report = validate_config(cfg)
    assert any("xpred" in line for line in report)


def test_validate_flags_missing_column_and_file(tmp_path):
    data = _data_csv(tmp_path)
    cfg = RunConfig("density", input=data, columns={"coords": ["x1", "zz"]})
    assert any("'zz'" in line for line in validate_config(cfg))
    cfg2 = RunConfig("density", input=str(tmp_path / "absent.csv"))
    assert any("input" in line for line in validate_config(cfg2))
    cfg3 = RunConfig("density")
    assert any("required" in line for line in validate_config(cfg3))


def test_validate_flags_bad_generator():
    cfg = RunConfig("gen", params={"generator": "cauchy", "n": 10})
    assert validate_config(cfg)
    cfg2 = RunConfig("gen", params={"generator": "mix", "n": 0})
    assert validate_config(cfg2)
    ok = RunConfig("gen", params={"generator": "mix", "n": 10})
    assert validate_config(ok) == []


def test_validate_flags_bad_formats_and_parallelism(tmp_path):
    cfg = RunConfig("gen", params={"generator": "mix", "n": 5},
                    formats=("yaml",), parallelism=0)
    report = validate_config(cfg)
    assert any("formats" in line for line in report)
    assert any("parallelism" in line for line in report)


def test_validate_collects_multiple_violations(tmp_path):
    data = _data_csv(tmp_path)
    cfg = RunConfig("qte", input=data,
                    columns={"response": "y", "treatment": "t",
                             "confounders": ["x1", "nope"]},
                    params={"probs": [1.2], "rdist": "known",
                            "method": "blocked",
                            "dpm": {"nclusters": 1}, "nclusters": 1})
    report = validate_config(cfg)
    assert len(report) >= 3


# ------------------------------------------------------------- gen runs

def _run_cli(tmp_path, sub, cfg_dict, *extra):
    cfg_path = tmp_path / f"{sub}_{len(extra)}.json"
    cfg_path.write_text(json.dumps(cfg_dict))
    return main([sub, "--config", str(cfg_path), *extra])


def test_gen_writes_dataset(tmp_path):
    out = tmp_path / "gen_out"
    code = _run_cli(tmp_path, "gen",
                    {"params": {"generator": "dunson", "n": 25},
                     "seed": 4, "out": str(out)})
    assert code == 0
    header, data = read_table(str(out / "data.csv"))
    assert header == ["x1", "y"]
    assert data.shape == (25, 2)
    env = json.loads((out / "result.json").read_text())
    assert set(env) == {"config", "seed", "versions", "timings", "results",
                        "metadata"}
    assert env["seed"] == 4


def test_gen_qte_columns(tmp_path):
    out = tmp_path / "gen_qte"
    code = _run_cli(tmp_path, "gen",
                    {"params": {"generator": "qte", "n": 10},
                     "out": str(out)})
    assert code == 0
    header, data = read_table(str(out / "data.csv"))
    assert header[:2] == ["x1", "x2"]
    assert header[-4:] == ["treatment", "y", "y0", "y1"]
    t = data[:, header.index("treatment")]
    y = data[:, header.index("y")]
    y0 = data[:, header.index("y0")]
    y1 = data[:, header.index("y1")]
    assert np.array_equal(y, np.where(t == 1, y1, y0))


# -------------------------------------------------------- pipeline runs

@pytest.fixture(scope="module")
def dunson_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_data")
    out = tmp / "gen"
    cfg = tmp / "gen.json"
    cfg.write_text(json.dumps({"params": {"generator": "dunson", "n": 150},
                               "seed": 11, "out": str(out)}))
    assert main(["gen", "--config", str(cfg)]) == 0
    return str(out / "data.csv")


def test_density_run_and_determinism(tmp_path, dunson_csv):
    cfg = {"input": dunson_csv, "columns": {"coords": ["x1", "y"]},
           "params": {"method": "blocked", "nclusters": 15, "nskip": 40,
                      "ndpost": 20, "keepevery": 1, "npoints": 10},
           "seed": 2, "out": str(tmp_path / "d1")}
    assert _run_cli(tmp_path, "density", cfg) == 0
    cfg2 = dict(cfg, out=str(tmp_path / "d2"))
    assert _run_cli(tmp_path, "density", cfg2) == 0

    e1 = json.loads((tmp_path / "d1" / "result.json").read_text())
    e2 = json.loads((tmp_path / "d2" / "result.json").read_text())
    for e in (e1, e2):
        e.pop("timings")
        e.pop("metadata")
        e["config"].pop("out")
    assert e1 == e2
    c1 = (tmp_path / "d1" / "density_avg.csv").read_bytes()
    c2 = (tmp_path / "d2" / "density_avg.csv").read_bytes()
    assert c1 == c2
    assert e1["results"]["density_mass_on_grid"] == pytest.approx(1.0,
                                                                  abs=0.1)
    header, rows = read_table(str(tmp_path / "d1" / "density_avg.csv"))
    assert header == ["coord1", "coord2", "density"]
    assert rows.shape == (100, 3)


def test_cdensity_schema_matches_across_samplers(tmp_path, dunson_csv):
    common = {"input": dunson_csv,
              "columns": {"response": "y", "covariates": ["x1"]},
              "params": {"nclusters": 12, "nskip": 40, "ndpost": 20,
                         "keepevery": 1, "kinds": ["pdf", "meanReg"],
                         "alphas": [0.1], "xpred": {"npoints": 5},
                         "ygrid": {"npoints": 15}},
              "seed": 2}
    outs = {}
    for method in ("blocked", "polya"):
        cfg = json.loads(json.dumps(common))
        cfg["params"]["method"] = method
        cfg["out"] = str(tmp_path / method)
        assert _run_cli(tmp_path, "cdensity", cfg) == 0
        outs[method] = json.loads(
            (tmp_path / method / "result.json").read_text())
    for method in outs:
        env = outs[method]
        assert set(env["timings"]) >= {"fit", "evaluate", "write"}
        for name in ("pdf_curves.csv", "meanReg_curves.csv"):
            assert (tmp_path / method / name).exists()
    hb, _ = read_table(str(tmp_path / "blocked" / "pdf_curves.csv"))
    hp, _ = read_table(str(tmp_path / "polya" / "pdf_curves.csv"))
    assert hb == hp
    assert set(outs["blocked"]["results"]) == set(outs["polya"]["results"])


def test_qte_run_with_xpred_file(tmp_path):
    gen_out = tmp_path / "g"
    assert _run_cli(tmp_path, "gen",
                    {"params": {"generator": "qte", "n": 120},
                     "seed": 6, "out": str(gen_out)}) == 0
    data_csv = str(gen_out / "data.csv")
    confs = [f"x{j}" for j in range(1, 11)]
    # xpred file: first 30 confounder rows
    header, data = read_table(data_csv)
    idx = [header.index(c) for c in confs]
    xp_path = tmp_path / "xp.csv"
    with open(xp_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(confs)
        w.writerows(data[:30, idx].tolist())
    cfg = {"input": data_csv,
           "columns": {"response": "y", "treatment": "treatment",
                       "confounders": confs},
           "params": {"probs": [0.5], "rdist": "known",
                      "xpred": str(xp_path), "k_draws": 1, "l_draws": 6,
                      "grid": {"npoints": 25},
                      "bart": {"nskip": 20, "keepevery": 2},
                      "dpm": {"nskip": 40, "keepevery": 1,
                              "nclusters": 10}},
           "seed": 2, "out": str(tmp_path / "q")}
    assert _run_cli(tmp_path, "qte", cfg) == 0
    env = json.loads((tmp_path / "q" / "result.json").read_text())
    res = env["results"]
    assert len(res["qtes"]["avg"]) == 1
    assert res["qtes"]["ci"] is None          # 6 draws: no intervals
    assert res["k_draws"] == 1
    for name in ("qte.csv", "qte_draws.csv", "arm_cdf_avg.csv",
                 "arm_pdf_avg.csv"):
        assert (tmp_path / "q" / name).exists()
    header, rows = read_table(str(tmp_path / "q" / "qte_draws.csv"))
    assert header == ["draw", "prob", "value"]
    assert rows.shape == (6, 3)


def test_diag_trace_schema(tmp_path, dunson_csv):
    cfg = {"input": dunson_csv, "columns": {"coords": ["x1", "y"]},
           "params": {"method": "blocked", "nclusters": 10, "nskip": 30,
                      "ndpost": 40, "keepevery": 1, "max_lag": 5},
           "seed": 2, "out": str(tmp_path / "dg")}
    assert _run_cli(tmp_path, "diag", cfg) == 0
    header, rows = read_table(str(tmp_path / "dg" / "trace.csv"))
    assert header == ["draw", "loglik", "logmpp", "alpha", "lambda",
                      "m_0", "m_1", "Psi_00", "Psi_01", "Psi_10", "Psi_11"]
    assert rows.shape == (40, 11)
    ah, acf = read_table(str(tmp_path / "dg" / "acf.csv"))
    assert ah == ["lag", "alpha_acf", "lambda_acf"]
    assert acf[0, 1] == 1.0 and acf[0, 2] == 1.0
    env = json.loads((tmp_path / "dg" / "result.json").read_text())
    assert "alpha_acf1" in env["results"]


def test_bart_run(tmp_path, dunson_csv):
    cfg = {"input": dunson_csv, "columns": {"response": "y"},
           "params": {"ntree": 20, "nskip": 30, "ndpost": 30,
                      "keepevery": 1},
           "seed": 2, "out": str(tmp_path / "b")}
    assert _run_cli(tmp_path, "bart", cfg) == 0
    env = json.loads((tmp_path / "b" / "result.json").read_text())
    assert "train_rmse" in env["results"]
    assert (tmp_path / "b" / "sigma2_trace.csv").exists()
    assert (tmp_path / "b" / "varimp.csv").exists()


# -------------------------------------------------------- failure paths

def test_validation_failure_exit_code(tmp_path, dunson_csv):
    cfg = {"input": dunson_csv, "columns": {"coords": ["x1", "y"]},
           "params": {"method": "blocked", "nclusters": 1},
           "out": str(tmp_path / "v")}
    assert _run_cli(tmp_path, "density", cfg) == 2
    assert not (tmp_path / "v").exists()      # nothing ran, nothing written


def test_validate_only_exit_codes(tmp_path, dunson_csv, capsys):
    good = {"input": dunson_csv, "columns": {"coords": ["x1", "y"]},
            "params": {"nskip": 5, "ndpost": 5},
            "out": str(tmp_path / "ok")}
    assert _run_cli(tmp_path, "density", good, "--validate-only") == 0
    assert "config ok" in capsys.readouterr().out
    assert not (tmp_path / "ok").exists()      # reporting only, no run

    bad = dict(good, params={"nclusters": 1, "method": "blocked"})
    assert _run_cli(tmp_path, "density", bad, "--validate-only") == 2


def test_runtime_failure_leaves_marker(tmp_path):
    # all rows in one arm: passes header validation, fails at runtime
    path = tmp_path / "one_arm.csv"
    rng = np.random.default_rng(3)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "y", "t"])
        for _ in range(30):
            w.writerow([rng.uniform(), rng.normal(), 0])
    out = tmp_path / "r"
    cfg = {"input": str(path),
           "columns": {"response": "y", "treatment": "t",
                       "confounders": ["x1"]},
           "params": {"probs": [0.5], "k_draws": 1, "l_draws": 5},
           "out": str(out)}
    assert _run_cli(tmp_path, "qte", cfg) == 3
    marker = out / "FAILED"
    assert marker.exists()
    assert "arms" in marker.read_text()


def test_seed_override_changes_results(tmp_path, dunson_csv):
    base = {"input": dunson_csv, "columns": {"coords": ["x1", "y"]},
            "params": {"method": "blocked", "nclusters": 10, "nskip": 20,
                       "ndpost": 10, "keepevery": 1, "npoints": 8},
            "seed": 2}
    cfg1 = dict(base, out=str(tmp_path / "s1"))
    cfg2 = dict(base, out=str(tmp_path / "s2"))
    assert _run_cli(tmp_path, "density", cfg1) == 0
    assert _run_cli(tmp_path, "density", cfg2, "--seed", "99") == 0
    c1 = (tmp_path / "s1" / "density_avg.csv").read_bytes()
    c2 = (tmp_path / "s2" / "density_avg.csv").read_bytes()
    assert c1 != c2
    env = json.loads((tmp_path / "s2" / "result.json").read_text())
    assert env["seed"] == 99
