"""Print the remapping overhead: closed-form approximation next to measured runs.

For each (modes, rank) pair the measured ratio comes from instrumented
approach-1 and remapped runs on a random tensor.
"""

import argparse

from mttkrp_memsim import cost_model as cm
from mttkrp_memsim.kernels import run_kernel
from mttkrp_memsim.synthetic import random_factors, random_tensor


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=12, help="length of every mode")
    ap.add_argument("--nnz", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'N':>2} {'R':>3} {'approx':>9} {'measured':>9} {'< 6%':>5}")
    for row in cm.overhead_table():
        n, r = row["modes"], row["rank"]
        dims = (args.dim,) * n
        t = random_tensor(dims, args.nnz, seed=args.seed)
        f = random_factors(dims, r, seed=args.seed)
        a1 = cm.measured_accesses(run_kernel(t, f, 0, "a1").counters, "a1", r)
        rm = cm.measured_accesses(run_kernel(t, f, 0, "remap").counters, "remap", r)
        print(f"{n:>2} {r:>3} {row['ratio']:>9.5f} {(rm - a1) / a1:>9.5f} "
              f"{'yes' if row['below_threshold'] else 'no':>5}")


if __name__ == "__main__":
    main()
