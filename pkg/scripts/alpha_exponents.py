"""Local order of |alpha_n(t)| at coalescences of optical(V) for several V."""

import argparse

from hillspec import acceptance, singular
from hillspec.potential import optical


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-max", type=int, default=8)
    ap.add_argument("--V", type=float, nargs="*", default=None)
    args = ap.parse_args()
    for V in args.V or [0.3, 0.5, acceptance.refined_V2()]:
        print(f"optical(V={V:.12g})")
        for r in singular.ess_groups(optical(V), args.n_max):
            res = r.fit_diagnostics.get("log_residual", float("nan"))
            print(f"  t0={r.t0:.4f} members={r.member_set} gamma={r.exponent:.3f} fit_rms={res:.2e} {r.verdict}")


if __name__ == "__main__":
    main()
