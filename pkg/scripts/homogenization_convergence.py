"""Homogenized tensor of the layered field a(x_1) = 2 + sin(2 pi x_1) against N.

Closed form: A*_11 is the harmonic mean of a, i.e. sqrt(3); A*_22 = A*_33 = 2.

    python3 scripts/homogenization_convergence.py --out results/homog
"""

import argparse
import csv
import time
from math import sqrt
from pathlib import Path

from pergreen.cells import correctors, homogenize
from pergreen.coeff_fields import layered_sine_field
from pergreen.torus import TorusGrid


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    p.add_argument("--out", type=Path, default=Path("results/homogenization"))
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    f = layered_sine_field(3)
    rows = []
    for N in args.sizes:
        t0 = time.perf_counter()
        T = homogenize(correctors(f, TorusGrid(3, N)))
        A = T.A_star
        rows.append([N, A[0, 0], A[1, 1], A[2, 2], abs(A[0, 0] - sqrt(3)),
                     time.perf_counter() - t0])
        print(f"N={N:4d}  A*11={A[0, 0]:.12f}  err={rows[-1][4]:.2e}  "
              f"A*22={A[1, 1]:.6f}  ({rows[-1][5]:.1f} s)")
    with open(args.out / "homogenization.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "A11", "A22", "A33", "err11", "seconds"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
