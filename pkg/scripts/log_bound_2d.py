"""Two-dimensional periodic Green function: logarithmic bound and the extrusion trick.

Compares the direct 2D table with the t-average of the 3D table of
blockdiag(A, 1), and reports the constant in |G| <= C log(2 + r) under
grid refinement.

    python3 scripts/log_bound_2d.py --sizes 128 256 512
"""

import argparse

from pergreen.coeff_fields import identity_field, layered_sine_field
from pergreen.estimates import log_bound_check_2d, sup_relative_gap
from pergreen.green import green_2d_from_3d, periodic_green
from pergreen.torus import TorusGrid


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    p.add_argument("--field", choices=["identity", "layered"], default="identity")
    args = p.parse_args()
    f = identity_field(2) if args.field == "identity" else layered_sine_field(2)
    for N in args.sizes:
        g = TorusGrid(2, N)
        tab = periodic_green(f, 1, g, [0, 0], 1e-12)
        lb = log_bound_check_2d(tab)
        line = f"N={N:4d}  C_max={lb.C_max:.5f}  C_ls={lb.C_ls:.5f}"
        if N <= 128:
            gap = sup_relative_gap(green_2d_from_3d(f, g, [0, 0], tol=1e-12), tab)
            line += f"  3D-trick gap={gap:.2e}"
        print(line)


if __name__ == "__main__":
    main()
