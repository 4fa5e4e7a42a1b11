import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from axiscatter.cli import EXIT_CONFIG, EXIT_NOCONV, EXIT_OK, main
from axiscatter.config import DEFAULTS, ConfigError, parse_config, schema
from axiscatter.report import (CSV_COLUMNS, FIELD_COLUMNS, REPORT_SCHEMA_ID, ReportError, RunReport,
                               read_csv, report_schema)
from axiscatter.runner import run_solve, run_study, study_cells

SPHERE = {"equation": "laplace", "bodies": [{"shape": "sphere", "r_panels": 8, "gauss_order": 10,
                                             "n_fourier": 41}]}
TINY = {"equation": "laplace", "bodies": [{"shape": "sphere", "r_panels": 4, "gauss_order": 6,
                                           "n_fourier": 11}]}


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("AXISCATTER_CACHE", str(tmp_path / "cache"))
    return tmp_path / "cache"


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_minimal_sphere_solve(tmp_path, capsys):
    cfg = write(tmp_path, SPHERE)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    r = RunReport.load(out / "report.json")
    assert r.iterations == 1 and r.converged
    assert r.rel_inf_error <= 1e-8
    rows = read_csv(out / "results.csv")
    assert len(rows) == 1 and rows[0]["N"] == str(r.N)
    assert "E_rel_inf" in capsys.readouterr().out


def test_invalid_shape_exit_code(tmp_path, capsys):
    bad = {"equation": "laplace", "bodies": [{"shape": "blob"}]}
    assert main(["solve", "--config", str(write(tmp_path, bad))]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [
    {"equation": "laplace", "bodies": [{"shape": "sphere"}], "extra": 1},
    {"equation": "laplace"},
    {"equation": "helmholtz", "bodies": [{"shape": "sphere"}]},
    {"equation": "laplace", "kappa": 2.0, "bodies": [{"shape": "sphere"}]},
    {"equation": "laplace", "bodies": [{"shape": "sphere", "n_fourier": 20}]},
    {"equation": "laplace", "bodies": [{"shape": "sphere", "params": {"radius": -1}}]},
    {"equation": "laplace", "bodies": [{"shape": "sphere"}], "study": {"kind": "convergence", "sweep": []}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        cfg = parse_config(bad)
        cfg.kernel()


def test_missing_config_file(tmp_path):
    assert main(["validate-config", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_validate_prints_defaults(tmp_path, capsys):
    assert main(["validate-config", "--config", str(write(tmp_path, TINY))]) == EXIT_OK
    d = json.loads(capsys.readouterr().out)
    assert d["solver"]["tol"] == 1e-9 and d["compression"]["eps"] == 1e-10


def test_schema_documents_defaults():
    s = schema()
    for sec, d in DEFAULTS.items():
        for k, v in d.items():
            assert s["properties"][sec]["properties"][k]["default"] == v


def test_wavelengths_convert_to_kappa():
    cfg = parse_config({"equation": "helmholtz", "wavelengths": 2, "bodies": [{"shape": "sphere"}]})
    assert cfg.kernel().kappa == pytest.approx(2 * np.pi, rel=1e-12)


def test_motion_forms_agree():
    q = parse_config({"equation": "laplace", "bodies": [
        {"shape": "sphere", "motion": {"axis": [0, 0, 1], "angle": np.pi / 2, "translation": [1, 2, 3]}},
        {"shape": "sphere", "motion": {"quaternion": [0, 0, np.sqrt(0.5), np.sqrt(0.5)],
                                       "translation": [1, 2, 3]}}]}).body_specs()
    assert np.allclose(q[0].motion.matrix, q[1].motion.matrix, atol=1e-15)
    with pytest.raises(ConfigError):
        parse_config({"equation": "laplace", "bodies": [
            {"shape": "sphere", "motion": {"quaternion": [0, 0, 0, 2]}}]}).body_specs()


def test_determinism(tmp_path):
    cfg = parse_config({**TINY, "bodies": TINY["bodies"] * 1 + [
        {**TINY["bodies"][0], "motion": {"translation": [4, 0, 0]}}], "verification": {"seed": 7}})
    a = run_solve(cfg).payload()
    b = run_solve(cfg).payload()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    c = run_solve(cfg.with_updates(verification={"seed": 8})).payload()
    assert c["extra"] != a["extra"]


def test_report_roundtrip_and_version(tmp_path):
    r = run_solve(parse_config(TINY))
    back = RunReport.from_json(r.to_json())
    assert back == r
    jsonschema.validate(r.to_dict(), report_schema())
    d = r.to_dict()
    d["schema"] = "axiscatter.report/0"
    with pytest.raises(ReportError):
        RunReport.from_dict(d)
    d = r.to_dict()
    del d["N"]
    with pytest.raises(ReportError):
        RunReport.from_dict(d)
    assert r.schema == REPORT_SCHEMA_ID


def test_study_cells():
    base = parse_config({**TINY, "study": {"kind": "precond-compare"}})
    labels = [c[0] for c in study_cells(base)]
    assert labels == ["precond", "noprecond"]
    with pytest.raises(ConfigError):
        study_cells(parse_config(TINY))


def test_convergence_study(tmp_path):
    sweep = [{"r_panels": n, "gauss_order": q, "n_fourier": f} for n, q, f in
             ((2, 6, 11), (4, 8, 21), (8, 10, 41))]
    cfg = write(tmp_path, {**TINY, "study": {"kind": "convergence", "sweep": sweep}})
    out = tmp_path / "study"
    assert main(["study", "--config", str(cfg), "--out", str(out), "--no-cache"]) == EXIT_OK
    with open(out / "results.csv") as fh:
        assert tuple(next(csv.reader(fh))) == CSV_COLUMNS
    errs = [float(r["rel_inf_error"]) for r in read_csv(out / "results.csv")]
    # non-increasing once resolved; a plateau at the error floor is allowed
    assert errs[1] < errs[0] and errs[2] <= 1.1 * errs[1] and errs[2] < 1e-7
    assert all((out / f"res{i:02d}.json").exists() for i in range(3))


def test_compress_compare_study(tmp_path):
    cfg = {"equation": "laplace", "bodies": [
        {"shape": "ellipsoid", "r_panels": 4, "gauss_order": 8, "n_fourier": 21},
        {"shape": "ellipsoid", "r_panels": 4, "gauss_order": 8, "n_fourier": 21,
         "motion": {"axis": [1, 0, 0], "angle": 1.0, "translation": [4.5, 0, 0]}}],
        "study": {"kind": "compress-compare"}}
    reports = run_study(parse_config(cfg))
    plain, comp = reports
    assert comp.N_compressed < plain.N and comp.ranks is not None
    assert 0.1 <= comp.rel_inf_error / plain.rel_inf_error <= 10


def test_nonconvergence_exit_code(tmp_path):
    cfg = {"equation": "helmholtz", "kappa": 2.0, "bodies": [
        {"shape": "sphere", "r_panels": 4, "gauss_order": 6, "n_fourier": 11},
        {"shape": "sphere", "r_panels": 4, "gauss_order": 6, "n_fourier": 11,
         "motion": {"translation": [4, 0, 0]}}],
        "solver": {"max_iter": 1, "tol": 1e-12}}
    assert main(["solve", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o"),
                 "--no-cache"]) == EXIT_NOCONV
    r = RunReport.load(tmp_path / "o" / "report.json")
    assert not r.converged


def test_field_samples_csv(tmp_path):
    cfg = write(tmp_path, {**TINY, "output": {"field_samples": "field.csv", "report": "run.json"}})
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    with open(tmp_path / "o" / "run-field.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == FIELD_COLUMNS and len(rows) == 11


def test_cache_verbs(tmp_path, cache_dir, capsys):
    cfg = write(tmp_path, TINY)
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert main(["cache", "list"]) == EXIT_OK
    assert "1 cached operator" in capsys.readouterr().out
    assert main(["cache", "clear"]) == EXIT_OK
    assert not list(cache_dir.glob("*.axop"))


def test_no_cache_leaves_disk_untouched(tmp_path, cache_dir):
    cfg = write(tmp_path, TINY)
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-cache"])
    assert not cache_dir.exists() or not list(cache_dir.glob("*.axop"))


def test_seed_flag(tmp_path):
    cfg = write(tmp_path, TINY)
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "3"])
    r = RunReport.load(tmp_path / "a" / "report.json")
    assert r.config["verification"]["seed"] == 3


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.json")),
                         ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert main(["validate-config", "--config", str(path)]) == EXIT_OK
