"""Exhaustive versus modular controller search on synthetic datasets.

Reports both winners, the number of simulated configurations and the gap
left by the modular heuristic.
"""

import argparse

from mttkrp_memsim.explorer import FpgaResources, ParamGrid, explore, explore_modular, resource_usage
from mttkrp_memsim.synthetic import kernel_trace, random_tensor, skewed_tensor


def describe(cfg) -> str:
    c, d, r = cfg.cache, cfg.dma, cfg.remapper
    return (f"lines={c.num_lines} ways={c.associativity} dmas={d.num_dmas} "
            f"buffers={d.buffers_per_dma} pointers={r.max_address_pointers}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--budget-fraction", type=float, default=0.6,
                    help="on-chip budget as a quantile of the grid's resource usage")
    ap.add_argument("--passes", type=int, default=1)
    args = ap.parse_args()

    traces = [
        kernel_trace(skewed_tensor((60, 40, 30), 500, seed=1), "a1", 0, rank=8),
        kernel_trace(random_tensor((30, 30, 30), 400, seed=2), "a2", 1, rank=8),
        kernel_trace(random_tensor((20, 50, 20), 300, seed=3), "remap", 1, rank=4),
    ]
    grid = ParamGrid(num_lines=(16, 64, 256), associativity=(1, 4), num_dmas=(1, 2),
                     buffers_per_dma=(1, 2), max_address_pointers=(16, 64))
    usages = sorted(resource_usage(c).total_bits for c in grid.points())
    budget = usages[min(int(len(usages) * args.budget_fraction), len(usages) - 1)]
    fpga = FpgaResources(bram_bits=budget, uram_bits=1)

    full = explore(traces, grid, fpga)
    mod = explore_modular(traces, grid, fpga, passes=args.passes)
    print(f"grid {grid.cardinality} configs, budget {budget} bits, "
          f"{full.feasible_count} feasible")
    print(f"exhaustive: t_avg {full.t_avg_best:.1f} ns after {full.evaluations} simulations")
    print(f"            {describe(full.best_config)}")
    print(f"modular:    t_avg {mod.t_avg_best:.1f} ns after {mod.evaluations} simulations")
    print(f"            {describe(mod.best_config)}")
    print(f"gap: {100 * (mod.t_avg_best / full.t_avg_best - 1):.2f}%")


if __name__ == "__main__":
    main()
