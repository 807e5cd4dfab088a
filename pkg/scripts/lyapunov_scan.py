"""Scan quadratic Lyapunov candidates on the V network and report stabilization radii.

    python3 scripts/lyapunov_scan.py --R 20 --n 81
"""

import argparse

import numpy as np

from ergojump import fixtures as fx
from ergojump.grid import Grid
from ergojump.model import LyapunovSpec, build_v_model, power_penalty, quadratic_form_margin
from ergojump.verify import LyapunovCheckSpec, check_assumptions


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--R", type=float, default=20.0)
    ap.add_argument("--n", type=int, default=81)
    ap.add_argument("--q1", type=float, nargs="+", default=[2.0, 4.0, 5.0, 8.0])
    ap.add_argument("--q2", type=float, nargs="+", default=[1.0, 2.5, 3.0, 5.0])
    ap.add_argument("--kappa-hat", type=float, default=5.0)
    ap.add_argument("--scale", type=float, default=4.0)
    args = ap.parse_args()

    g = Grid(2, args.R, args.n)
    params = fx.v_params_abandon_all()
    m = build_v_model(params)
    neg_model = fx.v_model()
    print(f"{'Q':>13} {'margin':>7} {'r penalty':>10} {'r stabilizing':>14} {'pass':>5} {'transient shell':>16}")
    for q1 in args.q1:
        for q2 in args.q2:
            Q = np.array([q1, q2])
            margin = quadratic_form_margin(np.diag(Q), params.M1)
            specs = [
                LyapunovCheckSpec(LyapunovSpec(Q, 1.0), "penalty", F=power_penalty(1.0, 1.0), label="penalty"),
                LyapunovCheckSpec(LyapunovSpec(Q, 2.0, args.scale), "stabilizing", control=fx.V_ABANDONING,
                                  kappa_hat=args.kappa_hat, label="stabilizing"),
            ]
            rep = check_assumptions(m, specs, g)
            neg = check_assumptions(neg_model, [LyapunovCheckSpec(LyapunovSpec(Q, 2.0, args.scale), "stabilizing",
                                                                  control=fx.V_TRANSIENT, kappa_hat=args.kappa_hat,
                                                                  label="t")], g)
            r = rep.measured["stabilization_radius"]
            print(f"({q1:5.2f},{q2:5.2f}) {margin:7.2f} {r['penalty']:10.2f} {r['stabilizing']:14.2f} "
                  f"{'yes' if rep.passed else 'no':>5} {neg.measured['shell_violation_fraction']['t']:16.1%}")


if __name__ == "__main__":
    main()
