import json

import pytest

from mttkrp_memsim.explorer import (
    FpgaResources,
    InfeasibleError,
    ParamGrid,
    explore,
    explore_modular,
    fits,
    resource_usage,
)
from mttkrp_memsim.memsim import (
    CacheConfig,
    ConfigError,
    DramModel,
    MemControllerConfig,
    RemapperConfig,
    simulate,
)
from mttkrp_memsim.synthetic import kernel_trace, random_tensor, random_trace, skewed_tensor
from oracles import brute_force_best

BIG = FpgaResources(bram_bits=10**9, uram_bits=10**9)
TOY_GRID = ParamGrid(num_lines=(16, 64, 256), num_dmas=(1, 2), buffers_per_dma=(1, 2))


@pytest.fixture(scope="module")
def datasets():
    return [
        kernel_trace(skewed_tensor((40, 30, 20), 300, seed=1), "a1", 0, rank=8),
        kernel_trace(random_tensor((25, 25, 25), 250, seed=2), "a2", 1, rank=8),
    ]


def mean_time(cfg, traces):
    return sum(simulate(t, cfg).total_time_ns for t in traces) / len(traces)


# ---------------------------------------------------------------- resources


def test_cache_bits_formula():
    cfg = MemControllerConfig(cache=CacheConfig(num_lines=1024, line_width_bytes=64,
                                                associativity=4))
    u = resource_usage(cfg)
    data_bits = 1024 * 64 * 8
    assert data_bits == 512 * 1024
    tag = 40 - 8 - 6  # 256 sets, 64-byte lines
    assert u.cache_bits == data_bits + 1024 * (tag + 1)


def test_pointer_storage_forty_megabytes():
    cfg = MemControllerConfig(remapper=RemapperConfig(max_address_pointers=10**7))
    u = resource_usage(cfg)
    assert u.pointer_bits == 320_000_000
    assert u.pointer_bytes == 40_000_000
    budget_35mb = FpgaResources(bram_bits=35 * 8 * 10**6 // 2, uram_bits=35 * 8 * 10**6 // 2)
    assert not fits(cfg, budget_35mb)


def test_fits_boundary_and_tiny():
    cfg = MemControllerConfig()
    total = resource_usage(cfg).total_bits
    assert fits(cfg, FpgaResources(bram_bits=total - 1, uram_bits=1))
    assert not fits(cfg, FpgaResources(bram_bits=total - 2, uram_bits=1))
    assert fits(cfg, BIG)


def test_per_pool_mode():
    cfg = MemControllerConfig(remapper=RemapperConfig(max_address_pointers=1000))
    u = resource_usage(cfg)
    rest = u.cache_bits + u.dma_bits + u.remapper_buffer_bits
    assert fits(cfg, FpgaResources(bram_bits=rest, uram_bits=u.pointer_bits, pooled=False))
    assert not fits(cfg, FpgaResources(bram_bits=rest + u.pointer_bits, uram_bits=1, pooled=False))
    assert fits(cfg, FpgaResources(bram_bits=rest + u.pointer_bits - 1, uram_bits=1))


def test_grid_validation():
    with pytest.raises(ConfigError):
        ParamGrid(num_dmas=())
    with pytest.raises(ConfigError):
        ParamGrid(num_dmas=(0, 1))
    with pytest.raises(ConfigError):
        ParamGrid.from_dict({"lines": [4]})
    assert TOY_GRID.cardinality == 12
    assert ParamGrid.from_dict(TOY_GRID.to_dict()) == TOY_GRID


def test_invalid_points_count_as_infeasible(datasets):
    grid = ParamGrid(num_lines=(2, 8), associativity=(4,))
    rep = explore(datasets, grid, BIG)
    assert rep.feasible_count == 1 and rep.infeasible_count == 1
    assert rep.best_config.cache.num_lines == 8


# ---------------------------------------------------------------- exhaustive search


def test_single_point_grid(datasets):
    rep = explore(datasets, ParamGrid(), BIG)
    assert len(rep.ranking) == 1
    assert rep.t_avg_best == mean_time(MemControllerConfig(), datasets)


def test_toy_grid_matches_brute_force(datasets):
    rep = explore(datasets, TOY_GRID, BIG)
    points = TOY_GRID.points()
    idx, t_avg = brute_force_best(points, lambda c: mean_time(c, datasets),
                                  lambda c: resource_usage(c).total_bits, BIG.total_bits)
    assert rep.best_config == points[idx]
    assert rep.t_avg_best == t_avg
    assert rep.feasible_count + rep.infeasible_count == TOY_GRID.cardinality
    assert all(fits(r.config, BIG) for r in rep.ranking)


def test_budget_excludes_configs(datasets):
    usages = sorted({resource_usage(c).total_bits for c in TOY_GRID.points()})
    fpga = FpgaResources(bram_bits=usages[len(usages) // 2], uram_bits=1)
    rep = explore(datasets, TOY_GRID, fpga)
    assert rep.infeasible_count > 0
    assert all(fits(r.config, fpga) for r in rep.ranking)
    idx, t_avg = brute_force_best(TOY_GRID.points(), lambda c: mean_time(c, datasets),
                                  lambda c: resource_usage(c).total_bits, fpga.total_bits)
    assert rep.best_config == TOY_GRID.points()[idx] and rep.t_avg_best == t_avg


def test_budget_relaxation_monotone(datasets):
    usages = sorted({resource_usage(c).total_bits for c in TOY_GRID.points()})
    prev = None
    for u in usages:
        rep = explore(datasets, TOY_GRID, FpgaResources(bram_bits=u, uram_bits=1))
        assert prev is None or rep.t_avg_best <= prev
        prev = rep.t_avg_best


def test_infeasible_grid(datasets):
    with pytest.raises(InfeasibleError):
        explore(datasets, TOY_GRID, FpgaResources(bram_bits=1, uram_bits=1))
    with pytest.raises(InfeasibleError):
        explore_modular(datasets, TOY_GRID, FpgaResources(bram_bits=1, uram_bits=1))
    with pytest.raises(ValueError):
        explore([], TOY_GRID, BIG)


def test_larger_cache_selected_when_dominant():
    traces = [random_trace(4000, seed=s, footprint_lines=256) for s in range(2)]
    grid = ParamGrid(num_lines=(16, 64, 256), associativity=(1,))
    rep = explore(traces, grid, BIG)
    assert rep.best_config.cache.num_lines == 256
    times = [r.t_avg for r in sorted(rep.ranking, key=lambda r: r.config.cache.num_lines)]
    assert times[0] > times[1] > times[2]


def test_deterministic_and_parallel_identical(datasets, monkeypatch):
    a = explore(datasets, TOY_GRID, BIG, workers=0)
    b = explore(datasets, TOY_GRID, BIG, workers=0)
    c = explore(datasets, TOY_GRID, BIG, workers=3)
    ja, jb, jc = (json.dumps(r.to_json(), sort_keys=True) for r in (a, b, c))
    assert ja == jb == jc
    assert a.ranking_csv() == c.ranking_csv()
    monkeypatch.setenv("MTTKRP_MEMSIM_THREADS", "2")
    assert json.dumps(explore(datasets, TOY_GRID, BIG).to_json(), sort_keys=True) == ja
    monkeypatch.setenv("MTTKRP_MEMSIM_THREADS", "many")
    with pytest.raises(ConfigError):
        explore(datasets, TOY_GRID, BIG)


def test_ranking_csv_rows(datasets):
    rep = explore(datasets, TOY_GRID, BIG)
    lines = rep.ranking_csv().strip().splitlines()
    assert len(lines) == 1 + rep.feasible_count
    assert lines[0].startswith("rank,index,")


# ---------------------------------------------------------------- modular search


def test_modular_never_beats_exhaustive(datasets):
    full = explore(datasets, TOY_GRID, BIG)
    mod = explore_modular(datasets, TOY_GRID, BIG)
    assert mod.heuristic and mod.method == "modular"
    assert mod.t_avg_best >= full.t_avg_best
    assert mod.feasible_count + mod.infeasible_count == TOY_GRID.cardinality
    assert mod.evaluations <= full.evaluations


def test_modular_single_point(datasets):
    full = explore(datasets, ParamGrid(), BIG)
    mod = explore_modular(datasets, ParamGrid(), BIG)
    assert mod.best_config == full.best_config and mod.t_avg_best == full.t_avg_best


def test_modular_separable_grid_matches():
    # cache-only traces: DMA and remapper choices cannot change the time,
    # so the smallest-footprint choice in those modules wins in both searches
    traces = [random_trace(2000, seed=s, footprint_lines=128) for s in range(2)]
    grid = ParamGrid(num_lines=(16, 64, 128), associativity=(1, 2), num_dmas=(1, 2),
                     buffers_per_dma=(1, 2))
    full = explore(traces, grid, BIG)
    mod = explore_modular(traces, grid, BIG)
    assert mod.best_config == full.best_config and mod.t_avg_best == full.t_avg_best


def test_modular_extra_passes_do_not_hurt(datasets):
    one = explore_modular(datasets, TOY_GRID, BIG, passes=1)
    two = explore_modular(datasets, TOY_GRID, BIG, passes=2)
    assert two.t_avg_best <= one.t_avg_best
    with pytest.raises(ValueError):
        explore_modular(datasets, TOY_GRID, BIG, passes=0)


def test_dram_model_changes_times(datasets):
    slow = DramModel(t_row_hit=50, t_row_miss=150)
    assert explore(datasets, ParamGrid(), BIG, dram=slow).t_avg_best > \
        explore(datasets, ParamGrid(), BIG).t_avg_best
