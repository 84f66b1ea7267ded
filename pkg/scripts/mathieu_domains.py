"""t-domain vs lambda-domain reconstruction for a Mathieu potential."""

import argparse

import numpy as np

from hillspec import expansion
from hillspec.potential import mathieu


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--a", type=complex, default=1.0)
    ap.add_argument("--b", type=complex, default=2.0)
    ap.add_argument("--n-max", type=int, default=16)
    args = ap.parse_args()

    q = mathieu(args.a, args.b)
    f = expansion.bump(0.5, 0.45)
    x = np.linspace(0, 1, 41)
    rt = expansion.reconstruct_t(f, q, n_max=args.n_max, x_grid=x)
    rl = expansion.reconstruct_lambda(f, q, n_max=args.n_max, x_grid=x)
    print(f"ESS groups: {rt.groups['groups0']} / {rt.groups['groups_pi']}")
    print(f"t-domain residual      {rt.residual:.3e}")
    print(f"lambda-domain residual {rl.residual:.3e}")
    print(f"max |t - lambda|       {np.abs(rt.reconstruction - rl.reconstruction).max():.3e}")
    print("p-branch signs:", rl.config["p_branch_signs"])


if __name__ == "__main__":
    main()
