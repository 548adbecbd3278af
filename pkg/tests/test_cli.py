import json
import subprocess
import sys

import numpy as np
import pytest

from mttkrp_memsim import cli
from mttkrp_memsim.synthetic import kernel_trace, random_tensor, random_trace
from mttkrp_memsim.tensor import write_frostt
from oracles import lru_reference


@pytest.fixture
def tns(tmp_path):
    path = tmp_path / "r.tns"
    write_frostt(random_tensor((10, 10, 10), 100, seed=1), path)
    return str(path)


def run(args, capsys):
    code = cli.main(args)
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- stats


def test_stats_small(tmp_path, capsys):
    p = tmp_path / "s.tns"
    p.write_text("1 1 1 1.0\n2 1 1 1.0\n1 3 1 1.0\n1 1 4 1.0\n2 3 4 5.5\n")
    code, out, _ = run(["stats", "--tensor", str(p)], capsys)
    js = json.loads(out)
    assert code == 0
    assert js["dims"] == [2, 3, 4] and js["nnz"] == 5 and js["format_version"] == 1


def test_stats_tensor_bytes_scale(tmp_path, capsys):
    # byte count is linear in nnz: 3e6 nonzeros of a 3-mode tensor at 16 bytes each
    p = tmp_path / "s.tns"
    p.write_text("1 1 1 1.0\n")
    code, out, _ = run(["stats", "--tensor", str(p)], capsys)
    one = json.loads(out)["tensor_bytes"]
    per_element = 16
    header = one - per_element
    assert header + 3 * 10**6 * per_element <= 2.25e9


def test_missing_file_exit_code(capsys):
    code, _, err = run(["stats", "--tensor", "/nonexistent/x.tns"], capsys)
    assert code == cli.EXIT_VALIDATION and "does not exist" in err


def test_parse_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.tns"
    p.write_text("1 1 1 1.0\n1 1 x 1.0\n")
    code, _, err = run(["stats", "--tensor", str(p)], capsys)
    assert code == cli.EXIT_PARSE
    assert "bad.tns" in err and "line 2" in err


def test_bad_rank_is_validation_error(tns, capsys):
    code, _, _ = run(["stats", "--tensor", tns, "--rank", "0"], capsys)
    assert code == cli.EXIT_VALIDATION


# ---------------------------------------------------------------- mttkrp


def test_mttkrp_single_nonzero(tmp_path, capsys):
    p = tmp_path / "one.tns"
    p.write_text("1 1 1 2.0\n")
    for name, row in (("a", "9 9"), ("b", "1 2"), ("c", "3 4")):
        (tmp_path / f"{name}.txt").write_text(row + "\n")
    out = tmp_path / "o"
    code, _, _ = run(["mttkrp", "--tensor", str(p), "--approach", "a1", "--mode", "0",
                      "--factors", str(tmp_path / "a.txt"), "--factors", str(tmp_path / "b.txt"),
                      "--factors", str(tmp_path / "c.txt"), "--out", str(out)], capsys)
    assert code == 0
    assert (out / "mode0_a1.txt").read_text().split() == ["6", "16"]
    report = json.loads((out / "mttkrp_report.json").read_text())
    assert report["modes"]["0"]["a1"]["max_rel_dev_vs_oracle"] == 0.0


def test_mttkrp_factor_shape_mismatch(tmp_path, capsys):
    p = tmp_path / "one.tns"
    p.write_text("1 1 1 2.0\n")
    (tmp_path / "f.txt").write_text("1 2\n")
    (tmp_path / "g.txt").write_text("1 2 3\n")
    args = ["mttkrp", "--tensor", str(p), "--factors", str(tmp_path / "f.txt"),
            "--factors", str(tmp_path / "f.txt"), "--factors", str(tmp_path / "g.txt")]
    assert run(args, capsys)[0] == cli.EXIT_VALIDATION
    assert run(args[:5], capsys)[0] == cli.EXIT_VALIDATION


def test_mttkrp_approach2_total(tns, tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["mttkrp", "--tensor", tns, "--approach", "a2", "--mode", "0",
                      "--rank", "16", "--out", str(out)], capsys)
    assert code == 0
    report = json.loads((out / "mttkrp_report.json").read_text())
    entry = report["modes"]["0"]["a2"]
    assert entry["total_accesses"] == 5060
    assert entry["cost_model"]["ok"]
    assert report["reconciled"] and report["format_version"] == 1
    assert report["config"]["rank"] == 16


def test_mttkrp_all_approaches_pairwise(tns, tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["mttkrp", "--tensor", tns, "--approach", "all", "--rank", "4",
                      "--out", str(out), "--emit-trace"], capsys)
    assert code == 0
    report = json.loads((out / "mttkrp_report.json").read_text())
    for mode in ("0", "1", "2"):
        assert report["modes"][mode]["pairwise_max_rel_dev"] < 1e-10
    assert (out / "mode1_remap.trace").exists()
    a = np.loadtxt(out / "mode0_a1.txt")
    b = np.loadtxt(out / "mode0_coo.txt")
    assert np.allclose(a, b, rtol=1e-12)


def test_mttkrp_binary_trace(tns, tmp_path, capsys):
    out = tmp_path / "o"
    run(["mttkrp", "--tensor", tns, "--approach", "a1", "--mode", "1", "--out", str(out),
         "--emit-trace", "--trace-format", "binary"], capsys)
    assert (out / "mode1_a1.bin").stat().st_size % 32 == 0


def test_mttkrp_reconciliation_failure(tns, tmp_path, capsys, monkeypatch):
    from mttkrp_memsim import cost_model

    real = cost_model.measured_accesses
    monkeypatch.setattr(cost_model, "measured_accesses", lambda c, a, r: real(c, a, r) + 1)
    code, _, err = run(["mttkrp", "--tensor", tns, "--approach", "a1", "--mode", "0",
                        "--out", str(tmp_path / "o")], capsys)
    assert code == cli.EXIT_RECONCILIATION and "reconciliation" in err


def test_mttkrp_deterministic(tns, tmp_path, capsys):
    for name in ("x", "y"):
        run(["mttkrp", "--tensor", tns, "--approach", "all", "--seed", "7",
             "--out", str(tmp_path / name)], capsys)
    for f in ("mttkrp_report.json", "mode2_a2.txt"):
        a = (tmp_path / "x" / f).read_text().replace(str(tmp_path / "x"), "")
        b = (tmp_path / "y" / f).read_text().replace(str(tmp_path / "y"), "")
        assert a == b


# ---------------------------------------------------------------- simulate


def test_simulate_empty_trace(tmp_path, capsys):
    p = tmp_path / "e.trace"
    p.write_text("# mttkrp-trace v1\n")
    code, out, _ = run(["simulate", "--trace", str(p)], capsys)
    assert code == 0 and json.loads(out)["total_time_ns"] == 0


def test_simulate_twice_identical(tns, capsys):
    outs = [run(["simulate", "--tensor", tns, "--mode", "0"], capsys)[1] for _ in range(2)]
    assert outs[0] == outs[1]
    assert json.loads(outs[0])["experiment"]["modes"] == [0]


def test_simulate_hit_rate_matches_oracle(tmp_path, capsys):
    trace = random_trace(3000, seed=9, footprint_lines=200)
    p = tmp_path / "r.trace"
    trace.save(p)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"cache": {"num_lines": 32, "associativity": 4}}))
    code, out, _ = run(["simulate", "--trace", str(p), "--config", str(cfg)], capsys)
    js = json.loads(out)
    ref = lru_reference((trace.address // 64).tolist(), 8, 4)
    assert code == 0
    assert js["cache_hit_rate"] == sum(ref) / len(ref)
    assert js["config"]["cache"]["num_lines"] == 32


def test_simulate_routing_error(tmp_path, capsys):
    p = tmp_path / "t.trace"
    kernel_trace(random_tensor((4, 4, 4), 10), "a1").save(p)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"routing": {"FactorRowLoadRandom": "cache"},
                               "routing_replace": True}))
    code, _, err = run(["simulate", "--trace", str(p), "--config", str(cfg)], capsys)
    assert code == cli.EXIT_VALIDATION and "no route" in err


# ---------------------------------------------------------------- explore


def write_cfg(tmp_path, tns, **extra):
    cfg = {"tensors": [tns], "modes": [0], "rank": 4, **extra}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_explore_one_config(tns, tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["explore", "--config", write_cfg(tmp_path, tns), "--out", str(out)], capsys)
    assert code == 0
    rows = (out / "explore_ranking.csv").read_text().strip().splitlines()
    assert len(rows) == 2
    report = json.loads((out / "explore_report.json").read_text())
    assert report["feasible_count"] == 1 and report["experiment"]["rank"] == 4


def test_explore_toy_grid_and_modular(tns, tmp_path, capsys):
    grid = {"num_lines": [16, 64, 256], "num_dmas": [1, 2], "buffers_per_dma": [1, 2]}
    out = tmp_path / "o"
    code, _, _ = run(["explore", "--config", write_cfg(tmp_path, tns, grid=grid),
                      "--out", str(out)], capsys)
    full = json.loads((out / "explore_report.json").read_text())
    assert code == 0 and full["feasible_count"] == 12
    cfg = write_cfg(tmp_path, tns, grid=grid, explore={"method": "modular"})
    code, out_text, _ = run(["explore", "--config", cfg], capsys)
    mod = json.loads(out_text)
    assert mod["heuristic"] and mod["t_avg_best_ns"] >= full["t_avg_best_ns"]


def test_explore_infeasible_exit(tns, tmp_path, capsys):
    cfg = write_cfg(tmp_path, tns, fpga={"bram_bits": 8, "uram_bits": 8})
    code, _, err = run(["explore", "--config", cfg], capsys)
    assert code == cli.EXIT_INFEASIBLE and "infeasible" in err


def test_bad_config_json(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    code, _, _ = run(["stats", "--config", str(p)], capsys)
    assert code == cli.EXIT_VALIDATION


def test_module_entry_point(tns):
    res = subprocess.run([sys.executable, "-m", "mttkrp_memsim", "stats", "--tensor", tns],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and json.loads(res.stdout)["nnz"] == 100
