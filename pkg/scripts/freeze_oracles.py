"""Brute-force reference values that the test suite freezes.

H^k(x, y) for A = I, d = 3 by the midpoint rule on an 80^3 grid per cell
(80^6 points for the double cell average).  For a harmonic kernel the
midpoint error has no h^2 term, so this is accurate far beyond the test
tolerance.  Requires numba.

    python3 scripts/freeze_oracles.py
"""

import json
import math
import sys
import time

import numpy as np
from numba import njit


@njit(cache=True)
def g(a, b, c):
    return 1.0 / (4.0 * math.pi * math.sqrt(a * a + b * b + c * c))


@njit(cache=True)
def h_term_midpoint(z, m):
    s = (np.arange(m) + 0.5) / m - 0.5
    single = 0.0
    for i in range(m):
        for j in range(m):
            for k in range(m):
                single += g(z[0] + s[i], z[1] + s[j], z[2] + s[k])
    single /= m**3
    # s - t takes the values (p - q)/m; count the multiplicity of each difference
    diff = np.arange(-(m - 1), m) / m
    mult = (m - np.abs(np.arange(-(m - 1), m))).astype(np.float64)
    double = 0.0
    for i in range(2 * m - 1):
        for j in range(2 * m - 1):
            acc = 0.0
            for k in range(2 * m - 1):
                acc += mult[k] * g(z[0] + diff[i], z[1] + diff[j], z[2] + diff[k])
            double += mult[i] * mult[j] * acc
    double /= float(m) ** 6
    return g(z[0], z[1], z[2]) - 2.0 * single + double


def main(m=40):
    x = np.array([0.1, 0.0, 0.0])
    y = np.array([-0.2, 0.1, 0.0])
    out = {}
    for k in ([3, 0, 0], [1, 1, 0], [2, -1, 1]):
        t = time.time()
        z = x - y + np.array(k, dtype=float)
        val = h_term_midpoint(z, m)
        out[str(k)] = val
        print(f"k={k} H={val:.17g} ({time.time() - t:.1f}s)", file=sys.stderr)
    print(json.dumps({"x": x.tolist(), "y": y.tolist(), "m": m, "H": out}, indent=2))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 80)
