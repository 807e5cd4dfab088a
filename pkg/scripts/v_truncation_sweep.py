"""Spatial truncation on the V network: rho(R) for a stabilizing outer control.

    python3 scripts/v_truncation_sweep.py --radii 0 1 2 3 4 --epsilon 0.02 --csv sweep.csv
"""

import argparse

from ergojump import fixtures as fx
from ergojump.grid import Grid
from ergojump.io import write_sweep
from ergojump.model import make_perturbation, power_penalty
from ergojump.solver import solve_ergodic_pi, truncation_sweep
from ergojump.verify import check_truncation_convergence


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--R", type=float, default=6.0)
    ap.add_argument("--n", type=int, default=81)
    ap.add_argument("--radii", type=float, nargs="+", default=[0.0, 1.0, 2.0, 3.0, 4.0])
    ap.add_argument("--outer-control", type=int, default=fx.V_ABANDONING)
    ap.add_argument("--epsilon", type=float, default=0.0)
    ap.add_argument("--csv", help="write the sweep to this CSV file")
    args = ap.parse_args()

    m, g = fx.v_model(), Grid(2, args.R, args.n)
    f_tilde = None
    if args.epsilon > 0:
        spec = make_perturbation(m, g, args.epsilon, power_penalty(1.0, m.growth_degree), delta=0.5)
        f_tilde = spec.f_tilde
        print(f"kappa_tilde = {spec.kappa_tilde:.4f}")
    full = solve_ergodic_pi(m, g, args.epsilon, f_tilde=f_tilde)
    sw = truncation_sweep(m, g, args.radii, args.outer_control, args.epsilon, f_tilde=f_tilde)
    print(f"outer control {m.controls.points[args.outer_control].tolist()} alone: rho = {sw.outer_rho:.6f}")
    for R, v, r in zip(sw.radii, sw.values, sw.results):
        print(f"R = {R:5.2f}  rho = {v:.8f}  PI iterations = {r.iterations}")
    print(f"unrestricted rho = {full.rho_star:.8f}")
    print(check_truncation_convergence(sw, full.rho_star).line())
    if args.csv:
        write_sweep(args.csv, sw)


if __name__ == "__main__":
    main()
