import json

import numpy as np
import pytest

from dbattn.cli import run_cli, to_json
from dbattn.io import read_dbfp, read_tensor, write_tensor


def report(path):
    with open(path) as fh:
        doc = json.load(fh)
    assert doc["schema_version"] == 1 and "config" in doc and "seed" in doc
    return doc


def test_fom_prints_value(capsys):
    assert run_cli(["fom", "--fmax", "625", "--n", "8", "--w", "16", "--lut", "1072",
                    "--ff", "824"]) == 0
    assert capsys.readouterr().out.strip() == "42.194"


def test_fom_published(capsys):
    assert run_cli(["fom", "--published"]) == 0
    assert "Hyft16\t42.194" in capsys.readouterr().out


def test_softmax_two_zeros(tmp_path):
    write_tensor(tmp_path / "row.dbt", np.array([0.0, 0.0]))
    out = tmp_path / "probs.json"
    assert run_cli(["softmax", "--in", str(tmp_path / "row.dbt"), "--lut-bits", "7",
                    "--out", str(out)]) == 0
    doc = report(out)
    assert doc["result"]["probabilities"] == [0.5, 0.5]
    assert doc["config"]["lut"]["index_bits"] == 7


def test_simulate(tmp_path):
    out = tmp_path / "sim.json"
    assert run_cli(["simulate", "--seq-len", "64", "--bandwidth", "64", "--out", str(out)]) == 0
    assert report(out)["result"]["total_cycles"] == 13
    assert run_cli(["simulate", "--seq-len", "8", "4096", "--out", str(out)]) == 0
    assert [r["seq_len"] for r in report(out)["result"]] == [8, 4096]


def test_usage_and_data_errors(tmp_path, capsys):
    assert run_cli(["nonsense"]) == 2
    assert run_cli(["fom", "--bogus", "1"]) == 2
    bad = tmp_path / "bad.dbt"
    bad.write_bytes(b"DBT1\x01")
    assert run_cli(["softmax", "--in", str(bad)]) == 3
    assert run_cli(["decode", "--in", str(bad), "-o", str(tmp_path / "x")]) == 3
    assert run_cli(["fom", "--fmax", "1", "--n", "1", "--w", "1", "--lut", "0", "--ff", "0"]) == 1
    assert run_cli(["fom", "--fmax", "1"]) == 1
    assert run_cli(["softmax", "--in", str(tmp_path / "missing.dbt")]) == 1
    capsys.readouterr()


def test_config_file_sections(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pipeline": {"bandwidth": 16}, "seed": 7}))
    out = tmp_path / "sim.json"
    assert run_cli(["simulate", "--seq-len", "64", "--config", str(cfg), "--out", str(out)]) == 0
    doc = report(out)
    assert doc["config"]["pipeline"]["bandwidth"] == 16 and doc["seed"] == 7
    assert doc["result"]["total_cycles"] == 7 + 4 + 3
    cfg.write_text(json.dumps({"bfp": {"mantissa_bits": 1}}))
    assert run_cli(["error-report", "--samples", "128", "--config", str(cfg)]) == 1
    cfg.write_text(json.dumps({"weird": {}}))
    assert run_cli(["simulate", "--seq-len", "8", "--config", str(cfg)]) == 1


def test_encode_decode_matmul_attention(tmp_path):
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-1, 1, (4, 8)), rng.uniform(-1, 1, (8, 3))
    write_tensor(tmp_path / "a.dbt", a)
    write_tensor(tmp_path / "b.dbt", b)
    assert run_cli(["encode", "--in", str(tmp_path / "a.dbt"), "-o", str(tmp_path / "a.dbf"),
                    "--adaptive"]) == 0
    assert run_cli(["decode", "--in", str(tmp_path / "a.dbf"), "-o", str(tmp_path / "a2.dbt")]) == 0
    assert np.max(np.abs(read_tensor(tmp_path / "a2.dbt") - a)) <= 2.0 ** -8
    assert run_cli(["matmul", "--a", str(tmp_path / "a.dbf"), "--b", str(tmp_path / "b.dbt"),
                    "-o", str(tmp_path / "c.dbf")]) == 0
    c = read_dbfp(tmp_path / "c.dbf")
    assert c.shape == (4, 3)
    for name in "qkv":
        write_tensor(tmp_path / f"{name}.dbt", rng.normal(size=(6, 4)))
    assert run_cli(["attention", "--q", str(tmp_path / "q.dbt"), "--k", str(tmp_path / "k.dbt"),
                    "--v", str(tmp_path / "v.dbt"), "-o", str(tmp_path / "o.dbt"),
                    "--report", str(tmp_path / "o.json")]) == 0
    assert read_tensor(tmp_path / "o.dbt").shape == (6, 4)
    assert report(tmp_path / "o.json")["result"]["shape"] == [6, 4]


def test_build_lut_and_use_it(tmp_path):
    assert run_cli(["build-lut", "-o", str(tmp_path / "t.dlt"), "--lut-bits", "6",
                    "--report", str(tmp_path / "t.json")]) == 0
    assert report(tmp_path / "t.json")["result"]["memory_bits"] == 64 * 9
    write_tensor(tmp_path / "r.dbt", np.array([[1.0, 2.0, 3.0]]))
    assert run_cli(["softmax", "--in", str(tmp_path / "r.dbt"), "--lut", str(tmp_path / "t.dlt"),
                    "--out", str(tmp_path / "p.json")]) == 0
    p = report(tmp_path / "p.json")["result"]["probabilities"]
    assert p == pytest.approx([0.0900, 0.2447, 0.6652], abs=2e-2)


def test_sweeps_and_reports(tmp_path):
    out = tmp_path / "pareto.csv"
    assert run_cli(["sweep-pareto", "--k-min", "4", "--k-max", "5", "--rows", "2",
                    "--format", "csv", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "index_bits,mae,memory_bits,softmax_max_err" and len(lines) == 3
    out = tmp_path / "align.json"
    assert run_cli(["compare-alignment", "--rows", "5", "--length", "16", "--out", str(out)]) == 0
    doc = report(out)
    assert "sigma=2.0" in doc["config"]["rows"] and len(doc["result"]["err_max"]) == 5
    out = tmp_path / "err.json"
    assert run_cli(["error-report", "--samples", "1280", "--out", str(out)]) == 0
    assert 0.5 <= report(out)["result"]["ratio"] <= 2.0


def test_byte_identical_reruns(tmp_path):
    outs = []
    for i in range(2):
        p = tmp_path / f"r{i}.json"
        assert run_cli(["compare-alignment", "--rows", "4", "--length", "16", "--seed", "11",
                        "--out", str(p)]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_json_17_digits():
    assert to_json({"x": 0.1}) == '{\n  "x": 0.10000000000000001\n}'
    assert json.loads(to_json({"x": [1 / 3, 2, True, None]}))["x"][0] == 1 / 3
