"""Finite-snapshot bias of the p_avg-reweighted self-XEB on Porter-Thomas tables.

Prints delta(N_s) next to 2/N_s and the exact inverse-gamma value 2/(N_s - 1).
"""
import argparse

import numpy as np

from xysim import xeb


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=1 << 16)
    ap.add_argument("--reps", type=int, default=8)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    rng = np.random.default_rng(a.seed)
    print("N_s   delta     2/N_s     2/(N_s-1)")
    for n_s in (2, 4, 8, 16, 32, 64, 128, 256):
        ex = []
        for _ in range(a.reps):
            acc = np.zeros(a.dim)
            for _ in range(n_s):
                x = rng.exponential(size=a.dim)
                acc += x / x.sum()
            x = rng.exponential(size=a.dim)
            p = x / x.sum()
            ex.append(xeb.renormalized_self_xeb(p, acc / n_s) - xeb.self_xeb_exact(p))
        print(f"{n_s:4d}  {np.mean(ex):.5f}   {2 / n_s:.5f}   {2 / (n_s - 1):.5f}")


if __name__ == "__main__":
    main()
