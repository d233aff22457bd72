import json
import os

import numpy as np
import pytest

from sddprh.cli import load_manifest, main
from sddprh.horizon import load_horizon_map, load_scan
from sddprh.model import instance_to_dict, load_instance
from sddprh.rolling import load_result
from sddprh.sddp import load_pool

TOY = {
    "format": 1,
    "c0": 1.0,
    "demand": 3.4,
    "penalty": 50.0,
    "hydro": [
        {
            "efficiency": 0.81,
            "turbine_cap": 5.5,
            "storage_cap": 11.3,
            "storage_min": 0.0,
            "initial_storage": 4.4,
            "upstream": [],
            "downstream": [],
            "pump_cap": 0.0,
        }
    ],
    "thermal": [
        {"generation_cap": 1.5, "generation_min": 0.0, "unit_cost": 3.0},
        {"generation_cap": 2.0, "generation_min": 0.0, "unit_cost": 9.0},
    ],
    "inflow": {
        "stationary": True,
        "realizations": [[1.18], [2.15]],
        "probabilities": [0.34, 0.66],
    },
}

FAST_TRAIN = ["--max-iterations", "60", "--stall-window", "12", "--stall-tol", "1e-6",
              "--cut-tol", "1e-6"]


@pytest.fixture()
def toy_instance(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(TOY))
    return str(path)


def read_nonwall(path):
    """Result table minus wall-clock fields (the determinism contract)."""
    keep = []
    for line in open(path):
        line = line.rstrip("\n")
        if line.startswith("# total_wall_ms"):
            continue
        if line.startswith("#") or line.startswith("roll\t"):
            keep.append(line)
            continue
        keep.append("\t".join(line.split("\t")[:-1]))
    return keep


def test_gen_writes_valid_preset(tmp_path):
    out = tmp_path / "inst.json"
    assert main(["gen", "--plants", "1", "--demand", "1000", "--realizations", "5",
                 "--out", str(out)]) == 0
    inst = load_instance(out)
    assert inst.hydro[0].turbine_cap == 1688.0
    assert len(inst.inflow_process) == 5
    manifest = load_manifest(str(out) + ".manifest.json")
    assert manifest["command"] == "gen"
    assert manifest["arguments"]["plants"] == 1


def test_gen_embeds_twelve_outcome_table(tmp_path):
    out = tmp_path / "inst12.json"
    assert main(["gen", "--plants", "6", "--demand", "2250", "--realizations", "12",
                 "--out", str(out)]) == 0
    inst = load_instance(out)
    assert len(inst.inflow_process) == 12
    assert inst.inflow_process.realizations[0].data[3] == 120.0


def test_gen_strict_preset_rejection(tmp_path):
    out = tmp_path / "x.json"
    assert main(["gen", "--demand", "1234", "--strict-presets", "--out", str(out)]) == 2
    assert main(["gen", "--demand", "1234", "--out", str(out)]) == 0  # custom ok


def test_simulate_static_and_baseline_gap(tmp_path, toy_instance):
    ref = tmp_path / "ref.tsv"
    assert main(["simulate", "--instance", toy_instance, "--policy", "static", "--tau", "3",
                 "-T", "30", "--seed", "5", "--out", str(ref), *FAST_TRAIN]) == 0
    res = load_result(ref)
    assert len(res.records) == 30

    out = tmp_path / "res.tsv"
    assert main(["simulate", "--instance", toy_instance, "--policy", "static", "--tau", "1",
                 "-T", "30", "--seed", "5", "--out", str(out), "--baseline", str(ref),
                 *FAST_TRAIN]) == 0
    lines = open(out).read().splitlines()
    gapline = [l for l in lines if l.startswith("# gap")]
    assert len(gapline) == 1
    gap = float(gapline[0].split("\t")[1])
    myopic = load_result(out)
    assert gap == pytest.approx((myopic.zbar - res.zbar) / res.zbar, rel=1e-9)


def test_simulate_deterministic_modulo_wall_time(tmp_path, toy_instance):
    a = tmp_path / "a.tsv"
    b = tmp_path / "b.tsv"
    flags = ["simulate", "--instance", toy_instance, "--policy", "static", "--tau", "2",
             "-T", "25", "--seed", "3", "--train-seed", "4", *FAST_TRAIN]
    assert main(flags + ["--out", str(a)]) == 0
    assert main(flags + ["--out", str(b)]) == 0
    assert read_nonwall(a) == read_nonwall(b)


def test_fit_then_dynamic_simulate(tmp_path, toy_instance):
    scan = tmp_path / "scan.tsv"
    hmap = tmp_path / "map.json"
    assert main(["fit", "--instance", toy_instance, "--samples", "8", "--w", "2",
                 "--tau-max", "6", "--seed", "1", "--out-scan", str(scan),
                 "--out-map", str(hmap), "--plot", "--max-iterations", "120",
                 "--stall-window", "15", "--stall-tol", "1e-8", "--cut-tol", "1e-7"]) == 0
    assert os.path.exists(str(hmap) + ".png")
    samples = load_scan(scan)
    assert len(samples) == 8
    fitted = load_horizon_map(hmap)
    assert 0.0 <= fitted.r2_avg <= 1.0 + 1e-12

    out = tmp_path / "dyn.tsv"
    assert main(["simulate", "--instance", toy_instance, "--policy", "dynamic",
                 "--map", str(hmap), "--tau-max", "6", "-T", "20", "--seed", "2",
                 "--out", str(out), *FAST_TRAIN]) == 0
    res = load_result(out)
    assert all(1 <= r.tau <= 6 for r in res.records)


def test_fit_insufficient_samples_is_config_error(tmp_path, toy_instance):
    assert main(["fit", "--instance", toy_instance, "--samples", "1", "--w", "2",
                 "--tau-max", "4", "--out-scan", str(tmp_path / "s.tsv"),
                 "--out-map", str(tmp_path / "m.json"), "--max-iterations", "30",
                 "--stall-window", "8"]) == 2


def test_bound_table_matches_reference_row(tmp_path):
    out = tmp_path / "bounds.tsv"
    assert main(["bound", "--kappa", "53000", "--out", str(out)]) == 0
    lines = [l for l in open(out).read().splitlines() if l and not l.startswith("#")
             and not l.startswith("gamma")]
    assert len(lines) == 11
    table = {float(l.split("\t")[0]): float(l.split("\t")[1]) for l in lines}
    assert table[0.10] == pytest.approx(9.77, abs=0.02)
    assert table[0.99] == pytest.approx(2686.09, abs=0.02)
    header = open(out).read()
    assert "inferred default" in header  # epsilon provenance is flagged


def test_bound_compute_kappa_and_echo(tmp_path, toy_instance):
    out = tmp_path / "b.tsv"
    assert main(["bound", "--compute-kappa", "--instance", toy_instance,
                 "--gamma", "0.5", "--out", str(out)]) == 0
    content = open(out).read()
    assert "(computed)" in content
    # thermal 1.5@3 + 2.0@9 then penalty 50 for demand 3.4 with no water:
    # 1.5*3 + 1.9*9 = 21.6 covers it (capacity 3.5 >= 3.4).
    kline = [l for l in content.splitlines() if l.startswith("# kappa\t")][0]
    assert float(kline.split("\t")[1]) == pytest.approx(1.5 * 3 + 1.9 * 9)
    # supplied kappa wins, computed is echoed alongside
    out2 = tmp_path / "b2.tsv"
    assert main(["bound", "--kappa", "100", "--compute-kappa", "--instance", toy_instance,
                 "--gamma", "0.5", "--out", str(out2)]) == 0
    c2 = open(out2).read()
    assert "# kappa\t100" in c2 and "kappa_computed" in c2


def test_bound_rejects_bad_gamma(tmp_path):
    assert main(["bound", "--kappa", "10", "--gamma", "1.5",
                 "--out", str(tmp_path / "x.tsv")]) == 2
    assert main(["bound", "--out", str(tmp_path / "y.tsv")]) == 2  # no kappa source


def test_bound_epsilon_saturation(tmp_path):
    out = tmp_path / "sat.tsv"
    assert main(["bound", "--kappa", "1.0", "--gamma", "0.5", "--epsilon", "10.0",
                 "--out", str(out)]) == 0
    row = [l for l in open(out).read().splitlines() if l.startswith("0.5")][0]
    assert float(row.split("\t")[1]) == 0.0


def test_train_stationary_roundtrip_and_simulate(tmp_path, toy_instance):
    pool_path = tmp_path / "pool.tsv"
    assert main(["train-stationary", "--instance", toy_instance, "--gamma", "0.5",
                 "--seed", "7", "--out-pool", str(pool_path), "--plot", *FAST_TRAIN]) == 0
    pool = load_pool(pool_path)
    assert pool.shared
    assert os.path.exists(str(pool_path) + ".png")

    out = tmp_path / "stat.tsv"
    assert main(["simulate", "--instance", toy_instance, "--policy", "stationary",
                 "--gamma", "0.5", "--pool", str(pool_path), "-T", "40", "--seed", "3",
                 "--out", str(out)]) == 0
    res = load_result(out)
    assert len(res.records) == 40


def test_train_stationary_rejects_gamma_one(tmp_path, toy_instance):
    assert main(["train-stationary", "--instance", toy_instance, "--gamma", "1.0",
                 "--out-pool", str(tmp_path / "p.tsv")]) == 2


def test_train_stationary_snapshot_deterministic(tmp_path, toy_instance):
    p1 = tmp_path / "p1.tsv"
    p2 = tmp_path / "p2.tsv"
    flags = ["train-stationary", "--instance", toy_instance, "--gamma", "0.4",
             "--seed", "9", *FAST_TRAIN]
    assert main(flags + ["--out-pool", str(p1)]) == 0
    assert main(flags + ["--out-pool", str(p2)]) == 0
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_fit_parallel_jobs_matches_tau_stars(tmp_path, toy_instance):
    serial_scan = tmp_path / "ser.tsv"
    parallel_scan = tmp_path / "par.tsv"
    flags = ["fit", "--instance", toy_instance, "--samples", "4", "--w", "2",
             "--tau-max", "5", "--seed", "6", "--max-iterations", "40",
             "--stall-window", "10", "--stall-tol", "1e-8", "--cut-tol", "1e-7"]
    assert main(flags + ["--out-scan", str(serial_scan),
                         "--out-map", str(tmp_path / "m1.json")]) == 0
    assert main(flags + ["--jobs", "2", "--out-scan", str(parallel_scan),
                         "--out-map", str(tmp_path / "m2.json")]) == 0
    serial = load_scan(serial_scan)
    parallel = load_scan(parallel_scan)
    assert [s.tau_star for s in serial] == [s.tau_star for s in parallel]
    assert [s.phi1 for s in serial] == [s.phi1 for s in parallel]


def test_missing_instance_file_is_io_error(tmp_path):
    assert main(["simulate", "--instance", str(tmp_path / "missing.json"),
                 "--policy", "static", "--tau", "1", "--out", str(tmp_path / "o.tsv")]) == 4


def test_malformed_instance_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"format\": 1}")
    assert main(["simulate", "--instance", str(bad), "--policy", "static", "--tau", "1",
                 "--out", str(tmp_path / "o.tsv")]) == 2


def test_plots_rendered(tmp_path, toy_instance):
    out = tmp_path / "res.tsv"
    assert main(["simulate", "--instance", toy_instance, "--policy", "static", "--tau", "2",
                 "-T", "10", "--out", str(out), "--plot", *FAST_TRAIN]) == 0
    assert os.path.exists(str(out) + ".png")
    bout = tmp_path / "bounds.tsv"
    assert main(["bound", "--kappa", "50", "--out", str(bout), "--plot"]) == 0
    assert os.path.exists(str(bout) + ".png")


def test_output_dir_env_var(tmp_path, toy_instance, monkeypatch):
    monkeypatch.setenv("SDDPRH_OUT", str(tmp_path))
    assert main(["bound", "--kappa", "10", "--gamma", "0.5", "--out", "envtest.tsv"]) == 0
    assert (tmp_path / "envtest.tsv").exists()


def test_manifest_roundtrip(tmp_path, toy_instance):
    out = tmp_path / "r.tsv"
    assert main(["simulate", "--instance", toy_instance, "--policy", "static", "--tau", "1",
                 "-T", "5", "--out", str(out), *FAST_TRAIN]) == 0
    doc = load_manifest(str(out) + ".manifest.json")
    assert doc["command"] == "simulate"
    assert doc["version"]
    assert doc["arguments"]["tau"] == 1
    assert "r.tsv" in doc["outputs"]


def test_instance_roundtrip_through_gen(tmp_path):
    out = tmp_path / "i.json"
    assert main(["gen", "--plants", "3", "--demand", "1750", "--out", str(out)]) == 0
    inst = load_instance(out)
    assert instance_to_dict(inst) == json.load(open(out))
