"""OU-with-jumps benchmark: solvers and simulation against the stationary-moment oracle.

    python3 scripts/ou_benchmark.py --sizes 41 81 161 --T 1000
"""

import argparse
import time

import numpy as np

from ergojump import fixtures as fx
from ergojump.grid import Grid
from ergojump.sim import estimate_ergodic_cost
from ergojump.solver import solve_ergodic_pi, vanishing_discount


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--R", type=float, default=8.0)
    ap.add_argument("--sizes", type=int, nargs="+", default=[41, 81, 161])
    ap.add_argument("--scheme", choices=["hybrid", "upwind"], default="hybrid")
    ap.add_argument("--T", type=float, default=1000.0)
    ap.add_argument("--h", type=float, default=0.01)
    ap.add_argument("--replications", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    m = fx.ou_jump_model()
    oracle = (1.0 + m.jumps.moment(2)) / 2.0
    print(f"oracle rho = {oracle:.6f}")
    print(f"{'n':>5} {'PI':>10} {'err':>8} {'VD':>10} {'err':>8} {'sec':>6}")
    for n in args.sizes:
        g = Grid(1, args.R, n)
        t0 = time.perf_counter()
        pi = solve_ergodic_pi(m, g, scheme=args.scheme)
        vd = vanishing_discount(m, g, alphas=list(np.geomspace(0.5, 1e-3, 10)), scheme=args.scheme)
        dt = time.perf_counter() - t0
        print(f"{n:5d} {pi.rho_star:10.6f} {abs(pi.rho_star / oracle - 1):8.2%} "
              f"{vd.rho_star:10.6f} {abs(vd.rho_star / oracle - 1):8.2%} {dt:6.2f}")
    est = estimate_ergodic_cost(m, 0, args.T, 0.05 * args.T, args.h, seed=args.seed, replications=args.replications)
    print(f"simulated rho = {est.point_estimate:.6f} +- {est.std_error:.6f} "
          f"({est.replications} paths, T={args.T:g}, h={args.h:g})")


if __name__ == "__main__":
    main()
