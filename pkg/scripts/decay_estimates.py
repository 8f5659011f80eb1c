"""Decay exponents and uniformity in n for the layered field in three dimensions.

Writes fits.csv (magnitudes per quantity, n and radius) and summary.json
(fitted exponents and constants per n, pooled exponent, spread of constants).

    python3 scripts/decay_estimates.py --N 64 --n 1 2 4 --out results/decay
"""

import argparse
from pathlib import Path

from pergreen.coeff_fields import layered_sine_field
from pergreen.estimates import (QUANTITIES, decay_fit, green_family, target_exponent,
                                uniformity_from_family, write_fit_csv, write_summary)
from pergreen.torus import TorusGrid


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--n", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/decay"))
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    fam = green_family(layered_sine_field(3), TorusGrid(3, args.N), args.n, jobs=args.jobs)
    fits = [decay_fit(fam, q) for q in QUANTITIES]
    reps = [uniformity_from_family(fam, q) for q in QUANTITIES]
    for f, r in zip(fits, reps):
        per_n = ", ".join(f"n={n}: {v:.3f}" for n, v in f.p_hat.items())
        print(f"{f.quantity:7s} target {target_exponent(f.quantity, 3):+d}  pooled {f.p_pooled:+.3f}"
              f"  ({per_n})  spread {r.spread:.3f}")
    write_fit_csv(fits, args.out / "fits.csv")
    write_summary(fits, reps, args.out / "summary.json")


if __name__ == "__main__":
    main()
