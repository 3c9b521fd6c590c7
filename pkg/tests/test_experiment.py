import csv
import io
import json

import pytest

from resqlab.cli import main
from resqlab.experiment import (ConfigError, ExperimentConfig, emit_curve_data, expand_runs,
                                instance_seed, load_config, load_results, pseudo_time_us,
                                run_experiment)
from resqlab.metrics import XRESQ_SCHEDULE, compute_budget


def _cfg(tmp_path, **kw):
    base = dict(n_t=[2], n_r=[2], modulation=["QPSK"], snr_db=[10.0], detectors=["mmse"], l_p=[1],
                instances_per_point=1, output_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


def _rows(path):
    return list(csv.DictReader(open(path)))


def test_single_point_mmse(tmp_path):
    s = run_experiment(_cfg(tmp_path))
    rows = _rows(s.paths["csv"])
    assert len(rows) == 1
    assert rows[0]["ber"] not in ("", "nan")
    assert s.exit_code == 0
    man = json.load(open(s.paths["manifest"]))
    assert {"config", "versions", "wall_time_s"} <= set(man)


def test_rerun_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, detectors=["mmse", "xresq"], l_p=[1, 2], instances_per_point=5)
    a = run_experiment(cfg)
    first = open(a.paths["csv"]).read(), open(a.paths["json"]).read()
    b = run_experiment(cfg)
    assert (open(b.paths["csv"]).read(), open(b.paths["json"]).read()) == first


def test_bruteforce_never_worse_than_mmse(tmp_path):
    cfg = _cfg(tmp_path, n_t=[3], n_r=[3], snr_db=[4.0, 10.0], detectors=["mmse", "bruteforce"],
               instances_per_point=40)
    recs = run_experiment(cfg).records
    for snr in (4.0, 10.0):
        by = {r.detector: r for r in recs if r.snr_db == snr}
        assert by["ml"].instance_digest == by["mmse"].instance_digest
        assert by["ml"].ber <= by["mmse"].ber


def test_instance_seed_stability():
    p = (4, 4, "QPSK", 20.0)
    assert instance_seed(1, p, 3) == instance_seed(1, p, 3)
    assert instance_seed(1, p, 3) != instance_seed(1, p, 4)
    assert instance_seed(1, p, 3) != instance_seed(2, p, 3)


def test_iotresq_runs_follow_lp(tmp_path):
    cfg = _cfg(tmp_path, detectors=["iotresq", "iotresq:2", "xresq"], l_p=[1, 4, 6])
    runs, notes = expand_runs(cfg, "QPSK", 2)
    got = {(r.detector, r.l_p) for r in runs}
    assert ("iotresq", 4) in got and ("iotresq", 1) in got and ("iotresq:2", 16) in got
    assert ("iotresq", 6) not in got
    assert {("xresq", 1), ("xresq", 4), ("xresq", 6)} <= got


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        _cfg(tmp_path, snr_db=[])
    with pytest.raises(ConfigError):
        _cfg(tmp_path, instances_per_point=0)
    with pytest.raises(ValueError):
        _cfg(tmp_path, detectors=["sphere"])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"bogus": 1})


def test_fail_soft(tmp_path):
    # a bad trace fails its point but the sweep still writes results
    cfg = _cfg(tmp_path, channel=str(tmp_path / "missing.txt"))
    s = run_experiment(cfg)
    assert s.failures and s.exit_code == 2
    assert open(s.paths["csv"]).read().startswith("n_t,")


def _toml(tmp_path, extra="", name="exp.toml"):
    p = tmp_path / name
    p.write_text(f"""
[grid]
n_t = [4]
n_r = [4]
modulation = ["QPSK"]
snr_db = [8.0, 12.0]
detectors = ["mmse", "xresq"]
l_p = [1, 2, 4, 6]

[run]
instances_per_point = 4
master_seed = 5
output_dir = "{tmp_path / 'out'}"
{extra}
""")
    return p


def test_load_config_overrides(tmp_path):
    cfg = load_config(_toml(tmp_path), ["instances_per_point=2", "snr_db=[3.0]"])
    assert cfg.instances_per_point == 2 and cfg.snr_db == [3.0]
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.toml")


def test_curves(tmp_path):
    s = run_experiment(load_config(_toml(tmp_path)))
    recs, timing = load_results(s.paths["json"])
    lp = list(csv.DictReader(io.StringIO(emit_curve_data(recs, "lp"))))
    assert sum(r["detector"] == "xresq" for r in lp) == 4
    assert sum(r["detector"] == "mmse" for r in lp) == 4
    tm = list(csv.DictReader(io.StringIO(emit_curve_data(recs, "time", timing))))
    assert {float(r["value"]) for r in tm if r["detector"] == "xresq"} == {
        pseudo_time_us(lp_, 50) for lp_ in (1, 2, 4, 6)}
    assert pseudo_time_us(2, 50) == compute_budget(XRESQ_SCHEDULE, 100)
    snr = list(csv.DictReader(io.StringIO(emit_curve_data(recs, "snr"))))
    assert {r["value"] for r in snr} == {"8.0", "12.0"}
    with pytest.raises(ValueError):
        emit_curve_data([], "snr")
    with pytest.raises(ValueError):
        emit_curve_data(recs, "bits")


def test_cli_exit_codes(tmp_path, capsys):
    cfg = _toml(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    out_json = tmp_path / "out" / "results.json"
    curves = tmp_path / "lp.csv"
    assert main(["curves", "--input", str(out_json), "--axis", "lp", "--out", str(curves)]) == 0
    assert curves.read_text().startswith("detector,axis,value")
    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 1
    assert main(["frobnicate"]) == 1
    bad = _toml(tmp_path, extra=f'channel = "{tmp_path / "missing.txt"}"', name="bad.toml")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["oracle", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "oracle.json").exists()


def test_rerun_from_manifest(tmp_path):
    s = run_experiment(load_config(_toml(tmp_path)))
    csv_a = open(s.paths["csv"]).read()
    cfg2 = load_config(s.paths["manifest"])
    s2 = run_experiment(cfg2, workers=2)
    assert open(s2.paths["csv"]).read() == csv_a
