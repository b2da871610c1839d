import csv
import io
import json
from pathlib import Path

import jsonschema
import pytest

from fellerlab.cli import main
from fellerlab.config import config_from_dict, parse_config
from fellerlab.errors import ConfigError, DomainError
from fellerlab.report import load_schema
from fellerlab.runner import Results, emit_report, run_experiment

POISSON = {"type": "poisson_cubic", "a": 1, "b": 1,
           "sigma": {"kind": "sinusoidal", "c0": 1, "c1": 0.25},
           "m": 0.75, "M": 1.25, "lip_sigma": 0.25}
CHAIN = {"type": "finite_chain", "n": 2, "rows": [[0.9, 0.1], [0.2, 0.8]]}
DEMOS = Path(__file__).resolve().parent.parent / "demos" / "configs"


def small_configs():
    return {
        "defect": {"kind": "defect", "name": "defect", "master_seed": 3, "model": POISSON,
                   "params": {"z": 1.0, "x_grid": [1.1, 1.5], "t_grid": [0.5, 1, 2], "n": 300}},
        "tv": {"kind": "tv_defect", "name": "tv", "master_seed": 1, "model": CHAIN,
               "params": {"z": 0, "x_grid": [0, 1], "t_grid": [1, 2, 5], "n": 1}},
        "c4": {"kind": "c4", "name": "c4", "master_seed": 9, "model": POISSON,
               "params": {"z": 1.0, "eps": 0.5, "x_grid": [-1, 0.5, 2], "t_grid": [2, 4],
                          "n": 300}},
        "coupling": {"kind": "coupling_bounds", "name": "coupling", "master_seed": 2,
                     "model": POISSON, "params": {"x": 1.5, "y": 1.0, "lam": 2.0,
                                                  "t_grid": [0.5, 1, 2], "n": 300}},
        "reach": {"kind": "reachability", "name": "reach", "master_seed": 0, "model": POISSON,
                  "params": {"delta_tilde": 0.1, "eps": 0.1, "r_request": 7.0}},
        "oracle": {"kind": "chain_oracle", "name": "oracle", "master_seed": 0, "model": CHAIN,
                   "params": {"z": 0, "eps": 0.5,
                              "splitting": {"x1": 0, "x2": 1, "A": [0], "t1": 1, "k": 4}}},
    }


def run(raw, tmp_path, sub="a"):
    cfg = config_from_dict(dict(raw, out_dir=str(tmp_path / sub)))
    return cfg, run_experiment(cfg)


def test_parse_minimal_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(small_configs()["tv"]))
    cfg = parse_config(path)
    assert cfg.kind == "tv_defect" and cfg.master_seed == 1
    assert cfg.params["tolerance"] == 0.05  # default filled in
    assert cfg.formats == ["json", "csv", "plot"] or tuple(cfg.formats) == ("json", "csv", "plot")


def test_parse_errors_are_aggregated():
    raw = {"kind": "coupling_bounds", "name": "bad", "bogus": 1,
           "model": dict(POISSON, sigma={"kind": "sinusoidal", "c0": 1, "c1": 0.6}, lip_sigma=0.2),
           "params": {"x": 1.5, "y": 1.0, "lam": 1.0, "t_grid": [1], "n": 10}}
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    text = "\n".join(info.value.problems)
    assert "bogus" in text
    assert "master_seed" in text
    assert "lambda >" in text
    assert "sigma" in text.lower()
    assert len(info.value.problems) >= 4


def test_parse_rejects_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(path)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")


def test_emit_empty_results_rejected(tmp_path):
    with pytest.raises(DomainError):
        emit_report(Results(), ["json"], str(tmp_path))


@pytest.mark.parametrize("key", list(small_configs()))
def test_runs_are_byte_identical(tmp_path, key):
    raw = small_configs()[key]
    _, m1 = run(raw, tmp_path, "a")
    _, m2 = run(raw, tmp_path, "b")
    assert m1.ok, m1.errors
    assert m1.outputs_hash == m2.outputs_hash
    assert m1.config_hash == m2.config_hash
    for o in m1.outputs:
        a = (tmp_path / "a" / raw["name"] / o["file"]).read_bytes()
        b = (tmp_path / "b" / raw["name"] / o["file"]).read_bytes()
        assert a == b


@pytest.mark.parametrize("key", list(small_configs()))
def test_emitted_json_validates(tmp_path, key):
    raw = small_configs()[key]
    cfg, m = run(raw, tmp_path)
    report_schema, artifact_schema = load_schema("criterion_report"), load_schema("artifact")
    out = tmp_path / "a" / raw["name"]
    docs = [p for p in out.glob("*.json") if p.name != "config.json"]
    assert any(p.name == "manifest.json" for p in docs)
    for p in docs:
        doc = json.loads(p.read_text())
        schema = report_schema if "condition" in doc else artifact_schema
        jsonschema.validate(doc, schema)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["data"]["config_hash"] == cfg.config_hash()


def test_csv_rows_match_grids(tmp_path):
    raw = small_configs()["defect"]
    run(raw, tmp_path)
    out = tmp_path / "a" / "defect"
    rows = list(csv.DictReader(io.StringIO((out / "EC.csv").read_text())))
    assert len(rows) == 2 * 3
    plot = list(csv.reader(io.StringIO((out / "plot_EC_x1.5.csv").read_text())))
    assert plot[0] == ["t", "value", "ci_low", "ci_high"] and len(plot) == 1 + 3
    raw = small_configs()["coupling"]
    run(raw, tmp_path)
    lines = (tmp_path / "a" / "coupling" / "coupling.csv").read_text().splitlines()
    assert lines[0].startswith("# ") and len(lines) == 2 + 3


def test_estimator_error_is_recorded(tmp_path):
    raw = small_configs()["defect"]
    raw["params"]["x_grid"] = [1.1]
    raw["params"]["burn_in"] = 100.0  # no grid time after burn-in
    _, m = run(raw, tmp_path)
    assert not m.ok and "DomainError" in m.errors[0]


def test_cli_run_validate_schema(tmp_path, capsys, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(small_configs()["tv"]))
    assert main(["validate", "--config", str(path)]) == 0
    canon = json.loads(capsys.readouterr().out)
    assert canon["master_seed"] == 1 and "out_dir" not in canon

    monkeypatch.setenv("FELLERLAB_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(path), "--seed", "0x10"]) == 0
    printed = capsys.readouterr().out.split()
    assert "config.json" in printed
    manifest = json.loads((tmp_path / "env" / "tv" / "manifest.json").read_text())
    assert manifest["data"]["master_seed"] == 16

    assert main(["run", "--config", str(path), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "tv" / "TV-EC.json").exists()
    capsys.readouterr()

    assert main(["schema", "--print"]) == 0
    schemas = json.loads(capsys.readouterr().out)
    assert set(schemas) == {"criterion_report", "artifact"}

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kind": "nope"}))
    assert main(["validate", "--config", str(bad)]) == 2
    assert "invalid config" in capsys.readouterr().err


def test_cli_rejects_bad_seed(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--config", "x.json", "--seed", str(2 ** 64)])


@pytest.mark.parametrize("path", sorted(DEMOS.glob("*.json")), ids=lambda p: p.stem)
def test_demo_configs_validate(path):
    parse_config(path)
