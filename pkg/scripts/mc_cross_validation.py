"""Monte Carlo value of the feedback rule vs. the PDE value, with constant-rate baselines.

    python3 scripts/mc_cross_validation.py --paths 100000 --point 1 0.1 --point 2 0
"""

import argparse

from divratchet.cascade import CascadeConfig, assemble_surface, solve_cascade
from divratchet.model import REFERENCE_PARAMS
from divratchet.simulate import SimConfig
from divratchet.strategy import Strategy
from divratchet.verification import cross_validate_mc


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--h", type=float, default=2e-3)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--antithetic", action="store_true")
    ap.add_argument("--point", nargs=2, type=float, action="append", metavar=("X0", "C0"))
    args = ap.parse_args()
    points = [tuple(pt) for pt in args.point] if args.point else [(1.0, 0.1)]
    surface = assemble_surface(solve_cascade(REFERENCE_PARAMS, CascadeConfig(n=args.n, h=args.h)))
    cfg = SimConfig(dt=args.dt, n_paths=args.paths, seed=args.seed, antithetic=args.antithetic)
    strategy = Strategy.from_surface(surface, 0.0)
    fails = 0
    for chk in cross_validate_mc(surface, strategy, points, cfg, workers=args.workers):
        fails += not chk.passed
        print(f"{'PASS' if chk.passed else 'FAIL'}  {chk.name:<24} measured={chk.measured:.4g} "
              f"tol={chk.tolerance:.4g}  {chk.detail}")
    raise SystemExit(1 if fails else 0)


if __name__ == "__main__":
    main()
