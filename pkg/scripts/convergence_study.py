"""Grid-refinement study: Cauchy differences of v and X as (n, h) are refined.

    python3 scripts/convergence_study.py --steps 4
"""

import argparse
import json

from divratchet.cascade import RefineConfig, refine_until_converged
from divratchet.model import REFERENCE_PARAMS, ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mu", type=float, default=REFERENCE_PARAMS.mu)
    ap.add_argument("--sigma", type=float, default=REFERENCE_PARAMS.sigma)
    ap.add_argument("--r", type=float, default=REFERENCE_PARAMS.r)
    ap.add_argument("--c-bar", type=float, default=REFERENCE_PARAMS.c_bar)
    ap.add_argument("--n0", type=int, default=16)
    ap.add_argument("--h0", type=float, default=8e-3)
    ap.add_argument("--steps", type=int, default=4)
    ap.add_argument("--json", help="also write the report here")
    args = ap.parse_args()
    p = ModelParams(args.mu, args.sigma, args.r, args.c_bar)
    # never stop early: the point is the whole sequence
    cfg = RefineConfig(n0=args.n0, h0=args.h0, max_steps=args.steps, tol_conv=1e-300, tol_boundary=1e-300)
    _, rep = refine_until_converged(p, cfg)
    print(f"{'n':>5} {'h':>8} {'X(0)':>9} {'X(c_bar)':>9} {'dv':>9} {'dX':>9} {'ratio':>6} {'secs':>6}")
    prev = None
    for run in rep.runs:
        dv = run.get("v_diff")
        ratio = f"{prev / dv:6.2f}" if prev and dv else ""
        print(f"{run['n']:5d} {run['h']:8.1e} {run['X_0']:9.5f} {run['X_c_bar']:9.5f} "
              f"{dv if dv is not None else float('nan'):9.2e} {run.get('x_diff', float('nan')):9.2e} "
              f"{ratio:>6} {run['elapsed']:6.2f}")
        prev = dv
    print(f"strictly decreasing: {rep.decreasing}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rep.to_dict(), fh, indent=2)


if __name__ == "__main__":
    main()
