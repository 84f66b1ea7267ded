"""Scan the optical potential for band-collision couplings and refine V2.

    python scripts/critical_couplings.py [--lo 0.3] [--hi 1.0] [--grid 8192]
"""

import argparse
import time

import numpy as np

from hillspec import hill, singular
from hillspec.potential import optical


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lo", type=float, default=0.3)
    ap.add_argument("--hi", type=float, default=1.0)
    ap.add_argument("--grid", type=int, default=8192)
    args = ap.parse_args()

    t0 = time.perf_counter()
    Vs = singular.critical_V((args.lo, args.hi))
    print(f"scan ({args.lo}, {args.hi}) -> {len(Vs)} critical couplings in {time.perf_counter() - t0:.1f}s")
    for V in Vs:
        print(f"  V = {V:.12f}")

    # V2 to full precision on a fixed solver grid (the EP location is grid dependent at ~1e-14)
    lam0 = np.mean(hill.galerkin_eigenvalues(optical(0.888437), 0.0, 40)[:2])
    for n in (2048, 4096, args.grid):
        V2 = singular.refine_critical_V(0.888437 - 1e-5, 0.888437 + 1e-5, lam0, 0.0, n)
        print(f"  V2 refined on grid {n:5d}: {V2:.16f}")


if __name__ == "__main__":
    main()
