"""Compute exact-solver reference values once and store them for the tests.

The barycenter instances use squared distances between random points on a
line, so the fixed-support problem is a genuine W2 barycenter. Instances
whose LP optimum is not unique are skipped: an entropic solver converges to
one particular point of the optimal face, and comparing it with an arbitrary
LP vertex says nothing about correctness.

Usage::

    python scripts/freeze_oracles.py tests/data/ot_oracle.json
"""

import json
import sys

import numpy as np

from wgnn.ot import exact_fixed_support_barycenter, exact_w2_lp

N_INSTANCES = 50


def instance(rng):
    k = int(rng.integers(2, 5))
    N = int(rng.integers(1, 4))
    x = np.sort(rng.uniform(0.0, 1.0, k))
    D = (x[:, None] - x[None, :]) ** 2
    P = rng.dirichlet(np.ones(k), size=N)
    w = rng.dirichlet(np.ones(N))
    return D, P, w


def barycenter_cases(seed=2024):
    rng = np.random.default_rng(seed)
    cases, skipped = [], 0
    while len(cases) < N_INSTANCES:
        D, P, w = instance(rng)
        sol = exact_fixed_support_barycenter(P, w, D)
        if not sol.unique:
            skipped += 1
            continue
        cases.append({"D": D.tolist(), "P": P.tolist(), "w": w.tolist(),
                      "barycenter": sol.p.tolist(), "objective": sol.objective})
    return cases, skipped


def transport_cases(seed=7):
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < N_INSTANCES:
        k = int(rng.integers(2, 5))
        lam = np.sort(rng.uniform(0.5, 3.0, k))[::-1]
        sq = lam**2
        D = np.abs(sq[:, None] - sq[None, :])
        p, q = rng.dirichlet(np.ones(k), size=2)
        cost, _ = exact_w2_lp(p, q, D)
        cases.append({"D": D.tolist(), "p": p.tolist(), "q": q.tolist(), "cost": cost})
    return cases


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "tests/data/ot_oracle.json"
    bary, skipped = barycenter_cases()
    data = {"barycenters": bary, "skipped_non_unique": skipped, "transport": transport_cases()}
    with open(out, "w") as fh:
        json.dump(data, fh, indent=1)
    print(f"wrote {len(bary)} barycenter cases ({skipped} non-unique skipped) to {out}")


if __name__ == "__main__":
    main()
