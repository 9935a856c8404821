import csv
import hashlib
import json

import pytest
import yaml

from essf.cli import main

BINARY_CLASSICAL = {
    "preset": {"kind": "classical", "c": 0.0, "lambda": [{"weight": 1, "pairs": [[0.5, 0.5], [0.5, 0.5]]}]},
    "level": 6,
    "horizon": 2.0,
    "query_times": [0.5, 1.0, 2.0],
    "replicates": 1000,
    "seed": 42,
    "thetas": [0, 1, 2],
}


def write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if name.endswith(".json") else yaml.safe_dump(doc))
    return str(path)


def rows(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def digest(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


def test_empty_measure_simulation(tmp_path):
    cfg = write(tmp_path, {"characteristics": {"d": 0.1}, "level": 3, "horizon": 1.0,
                           "query_times": [0.5, 1.0], "replicates": 4, "seed": 1}, "cfg.json")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "trees.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    assert header["seed"] == 1 and "config_hash" in header
    nodes = [json.loads(ln) for ln in lines[1:]]
    assert len(nodes) == 4 and all(n["parent"] is None for n in nodes)
    assert {r["block_count"] for r in rows(tmp_path / "o" / "snapshots.csv")} == {"1"}


def test_simulation_shape_and_determinism(tmp_path):
    cfg = write(tmp_path, BINARY_CLASSICAL)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    data = rows(tmp_path / "a" / "snapshots.csv")
    assert len(data) == 1000 * 3
    assert list(data[0]) == ["replicate", "t", "block_count", "S_theta_0", "S_theta_1", "S_theta_2"]
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    first = (tmp_path / "a" / "snapshots.csv").read_text().splitlines()[0]
    assert first.startswith("# config_hash=") and first.endswith("seed=42")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "43"]) == 0
    assert digest(tmp_path / "a")["trees.jsonl"] != digest(tmp_path / "c")["trees.jsonl"]


def test_self_similar_outputs(tmp_path):
    doc = {**BINARY_CLASSICAL, "replicates": 20, "horizon": 80.0, "query_times": [0.2, 1.0]}
    doc["preset"] = {**doc["preset"], "c": 0.5, "alpha": -1.0}
    cfg = write(tmp_path, doc)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    summary = rows(tmp_path / "o" / "summary.csv")
    assert all(float(r["absorption_time"]) > 0 and float(r["total_length"]) > 0 for r in summary)


def test_unreachable_self_similar_time_is_runtime_error(tmp_path):
    doc = {"characteristics": {"alpha": -1.0, "lambda": [{"weight": 1, "pairs": [[0.5, 1], [0.5, 1]]}]},
           "level": 3, "horizon": 0.5, "query_times": [100.0], "replicates": 2, "seed": 0}
    assert main(["simulate", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize(
    "doc",
    [
        {**BINARY_CLASSICAL, "seed": None},
        {k: v for k, v in BINARY_CLASSICAL.items() if k != "seed"},
        {**BINARY_CLASSICAL, "preset": {"kind": "classical", "lambda": [{"weight": 1, "pairs": [[0.5, 1], [0.5, 1]]}]}},
        {**BINARY_CLASSICAL, "preset": {"kind": "nope"}},
        {**BINARY_CLASSICAL, "colour": "blue"},
        {"characteristics": {"c": -1}, "seed": 1},
        {"characteristics": {"lambda": [{"weight": 1, "pairs": [[0.4, 1], [0.7, 1]]}]}, "seed": 1},
        {**BINARY_CLASSICAL, "horizon": -1},
    ],
)
def test_invalid_configs(tmp_path, doc, capsys):
    assert main(["simulate", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1
    assert "invalid config" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["diagnose", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_integrability_printed(tmp_path, capsys):
    cfg = write(tmp_path, BINARY_CLASSICAL)
    main(["diagnose", "--config", cfg, "--out", str(tmp_path / "o")])
    assert "integrability value: 0.9804" in capsys.readouterr().err


def test_diagnose_bbm(tmp_path):
    cfg = write(tmp_path, {"preset": {"kind": "bbm", "drift": 2.0}, "seed": 3,
                           "diagnose": {"levels": [2, 8], "mc_level": 3, "mc_replicates": 200}})
    thetas = ["-2", "-0.5", "0", "1", "3"]
    assert main(["diagnose", "--config", cfg, "--out", str(tmp_path / "o"), "--theta", *thetas]) == 0
    data = rows(tmp_path / "o" / "cumulant.csv")
    assert list(data[0]) == ["theta", "kappa", "kappa_2", "kappa_8", "mc_mean", "mc_se"]
    for r in data:
        th = float(r["theta"])
        assert float(r["kappa"]) == pytest.approx(2 * th + th * th / 2 + 1, abs=1e-12)
        assert float(r["kappa_2"]) <= float(r["kappa_8"]) <= float(r["kappa"]) + 1e-12


def test_diagnose_empty_measure(tmp_path):
    cfg = write(tmp_path, {"characteristics": {"d": -0.3, "beta": 0.8}, "seed": 0})
    assert main(["diagnose", "--config", cfg, "--out", str(tmp_path / "o"), "--theta", "1.5"]) == 0
    (r,) = rows(tmp_path / "o" / "cumulant.csv")
    assert float(r["kappa"]) == pytest.approx(-0.3 * 1.5 + 0.4 * 1.5**2)


def test_diagnose_gf_preset(tmp_path):
    cfg = write(tmp_path, {"preset": {"kind": "gf", "d": 0.2, "jumps": [[1.0, -0.3], [0.5, -2.0]], "k": 0.1},
                           "seed": 0})
    assert main(["diagnose", "--config", cfg, "--out", str(tmp_path / "o"), "--theta", "2"]) == 0


TESTS = [
    {"kind": "split_rate", "n": 2, "replicates": 2000},
    {"kind": "consistency", "n": 2, "m": 4, "t": 1.0, "replicates": 2000},
    {"kind": "exchangeability", "n": 3, "t": 1.0, "replicates": 3000},
    {"kind": "martingale", "theta": 1.0, "n": "inf", "times": [0.5, 1.0, 2.0], "replicates": 100},
]


def test_test_command(tmp_path, capsys):
    doc = {**BINARY_CLASSICAL, "tests": TESTS}
    cfg = write(tmp_path, doc)
    assert main(["test", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    out = [json.loads(ln) for ln in capsys.readouterr().out.splitlines()]
    assert [r["verdict"] for r in out] == ["pass"] * 4
    lines = (tmp_path / "o" / "tests.jsonl").read_text().splitlines()
    assert len(lines) == 5
    assert main(["test", "--config", cfg, "--out", str(tmp_path / "o"), "--select", ""]) == 0


def test_test_command_negative_controls(tmp_path):
    doc = {**BINARY_CLASSICAL, "tests": [
        {"kind": "martingale", "theta": 1.0, "n": "inf", "times": [0.5, 1.0, 2.0], "replicates": 50,
         "kappa_scale": 1.1, "name": "bad-kappa"},
        {"kind": "exchangeability", "n": 3, "replicates": 3000, "corrupt_mark_of_1": True,
         "paintbox": [[0.5, 1.0], [0.3, 2.0]], "name": "bad-mark"},
        {"kind": "split_rate", "n": 2, "replicates": 500},
    ]}
    doc["preset"] = {**doc["preset"], "c": 0.3}
    cfg = write(tmp_path, doc)
    assert main(["test", "--config", cfg, "--out", str(tmp_path / "o")]) == 2 + 2
    assert main(["test", "--config", cfg, "--out", str(tmp_path / "o"), "--select", "bad-mark"]) == 3
    assert main(["test", "--config", cfg, "--out", str(tmp_path / "o"), "--select", "split_rate"]) == 0
