"""Expansion for optical(V2): detected ESS groups, delta tables and residual.

Prints the per-member and grouped cutoff integrals along delta_seq, showing
the members diverging while the grouped sum converges.
"""

import argparse
import json
import time

import numpy as np

from hillspec import acceptance, expansion
from hillspec.potential import optical


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-max", type=int, default=16)
    ap.add_argument("--out", default=None, help="write the report JSON here")
    args = ap.parse_args()

    V2 = acceptance.refined_V2()
    q = optical(V2)
    f = expansion.gaussian(np.pi / 2, 0.3)
    t0 = time.perf_counter()
    rep = expansion.reconstruct_t(f, q, n_max=args.n_max, x_grid=np.linspace(0, np.pi, 41),
                                  grid_size=acceptance.V2_GRID)
    print(f"V2 = {V2:.16f}   runtime {time.perf_counter() - t0:.1f}s")
    print(f"groups at 0: {rep.groups['groups0']}   groups at pi: {rep.groups['groups_pi']}")
    print(f"relative mean-square residual {rep.residual:.3e}")
    for key, row in rep.pv_convergence.items():
        print(key)
        print(f"  {'delta':>10s} {'grouped':>12s} " + " ".join(f"{'member ' + k:>12s}" for k in row["member_norms"]))
        for i, d in enumerate(row["delta"]):
            mem = " ".join(f"{v[i]:12.6f}" for v in row["member_norms"].values())
            print(f"  {d:10.1e} {row['grouped_norm'][i]:12.8f} {mem}")
        print("  grouped Cauchy differences:", ", ".join(f"{c:.2e}" for c in row["cauchy_diffs"]))
    if args.out:
        rep.to_json(args.out)


if __name__ == "__main__":
    main()
