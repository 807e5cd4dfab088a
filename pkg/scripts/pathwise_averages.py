"""Windowed cost averages under the solved V-network policy, with and without an outer control.

    python3 scripts/pathwise_averages.py --replications 16 --T 2000 4000
"""

import argparse

import numpy as np

from ergojump import fixtures as fx
from ergojump.grid import Grid
from ergojump.sim import window_averages, with_outer_control
from ergojump.solver import solve_ergodic_pi


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--R", type=float, default=6.0)
    ap.add_argument("--n", type=int, default=81)
    ap.add_argument("--T", type=float, nargs="+", default=[2000.0, 4000.0])
    ap.add_argument("--h", type=float, default=0.01)
    ap.add_argument("--replications", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    m, g = fx.v_model(), Grid(2, args.R, args.n)
    pi = solve_ergodic_pi(m, g)
    print(f"rho* = {pi.rho_star:.6f}")
    windows = [(T / 2, T) for T in args.T]
    for label, pol in (("box lookup", pi.policy), ("outer control", with_outer_control(pi.policy, fx.V_ABANDONING))):
        avgs, alive = window_averages(m, pol, windows, args.h, args.seed, args.replications)
        dev = avgs - pi.rho_star
        for (a, b), row in zip(windows, dev):
            print(f"{label:>13} [{a:g}, {b:g}]: mean dev {row.mean():+.4f}  RMS {np.sqrt(np.mean(row ** 2)):.4f}  "
                  f"max |dev| {np.abs(row).max():.4f}")


if __name__ == "__main__":
    main()
