"""Run the three tabular guarantees on random instances and summarize them.

    python demos/tabular_checks.py [N]
"""

import sys

import numpy as np

from midl_rl.theorems import verify


def main(n=50):
    t1 = list(verify(1, n, 0))
    built = sum(r["constructible"] for r in t1)
    need = min(r.get("required_mass", np.inf) for r in t1)
    print(f"lower bound: per-state premise constructible on {built}/{n} instances "
          f"(it needs omega mass >= {need:.2f})")
    print(f"  under the proof's own condition the bound held on "
          f"{sum(all(r['lower_bound']) for r in t1)}/{n}, min margin {min(r['margin'] for r in t1):.3f}")

    t2 = list(verify(2, n, 0))
    flagged = [r for r in t2 if r["flag"]]
    bad = [r["seed"] for r in flagged if not r["kappa1"] > r["kappa2"]]
    print(f"conservatism ordering: flag on {len(flagged)}/{n}, ordering violated on seeds {bad}")

    t3 = list(verify(3, n, 0))
    print(f"safe improvement: held on {sum(r['holds'] for r in t3)}/{n}, "
          f"min margin {min(r['margin'] for r in t3):.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 50)
