"""One-step weak consistency on the V network across states, controls and seeds.

For each (state, control, degree-2 monomial) the discrepancy at the three step
sizes is computed with common random numbers, and the script reports whether
it decreases in h and ends within 3 standard errors of zero.

    python3 scripts/weak_consistency_scan.py --seeds 0 1 2 3
"""

import argparse
import itertools

import numpy as np

from ergojump import fixtures as fx
from ergojump.model import quadratic
from ergojump.sim import weak_generator_check

HS = (1e-2, 5e-3, 2.5e-3)


def monomials():
    E = np.eye(2)
    return {"x1^2": quadratic(A=np.diag([1.0, 0.0])), "x2^2": quadratic(A=np.diag([0.0, 1.0])),
            "x1x2": quadratic(A=np.array([[0.0, 0.5], [0.5, 0.0]])), "|x|^2": quadratic(A=E),
            "x1": quadratic(p=E[0]), "x2": quadratic(p=E[1])}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--method", choices=["conditional", "plain"], default="conditional")
    args = ap.parse_args()

    m = fx.v_model()
    points = [((-1.5, -0.9), 0), ((-1.4, -1.0), 4), ((-1.4, 1.1), 8), ((0.0, 0.0), 4), ((2.0, 1.0), 0)]
    for seed in args.seeds:
        fails = []
        for (x, u), (name, fn) in itertools.product(points, monomials().items()):
            reps = [weak_generator_check(m, fn, np.array(x), u, h, args.samples, seed, args.method) for h in HS]
            d = [abs(r.delta) if abs(r.delta) > 1e-10 else 0.0 for r in reps]
            dec = all(b < a or a == b == 0.0 for a, b in zip(d, d[1:]))
            ok = dec and d[-1] <= 3 * reps[-1].std_error
            if not ok:
                fails.append(f"{name}@{x},u={u}: |delta|={['%.1e' % v for v in d]} se={reps[-1].std_error:.1e}")
        print(f"seed {seed}: {len(points) * 6 - len(fails)}/{len(points) * 6} pass")
        for f in fails:
            print("   ", f)


if __name__ == "__main__":
    main()
