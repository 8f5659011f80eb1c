"""The ten acceptance criteria, each at its stated tolerance.

Every test prints one ``CRITERION k: PASS|FAIL`` line (with capture disabled,
so the lines appear in the normal pytest output) and then asserts.
"""

import time
from math import sqrt

import numpy as np
import pytest

from pergreen.cells import correctors, homogenize, q_tensor, q_tensor_oracle
from pergreen.coeff_fields import identity_field, layered_sine_field, skew_test_field
from pergreen.decomposition import HTermContext, decompose, fit_beta, verify_mean_zero
from pergreen.estimates import (QUANTITIES, decay_fit, green_family, log_bound_check_2d,
                                sup_relative_gap, target_exponent, uniformity_from_family)
from pergreen.green import green_2d_from_3d, periodic_green, periodic_green_many
from pergreen.shells import shell_decay_certificate, shell_stats
from pergreen.torus import GridFunction, TorusGrid, assemble, solve

# pairs for the decomposition criteria: x a grid node of N = 64, y = x - z
X_PAIR = np.array([3, 5, 7]) / 64
Z_PAIRS = np.array([[8, 0, 0], [16, 4, 0], [20, 8, 4], [24, 16, 8], [12, 12, 12],
                    [16, 16, 16], [4, 8, 0], [10, -6, 3], [-18, 10, -7], [12, 4, 8]]) / 64


@pytest.fixture
def report(capsys):
    def emit(k: int, ok: bool, detail: str, t0: float):
        line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}  [{time.perf_counter() - t0:.1f} s]"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_criterion_1_homogenization(report):
    t0 = time.perf_counter()
    T = homogenize(correctors(layered_sine_field(3), TorusGrid(3, 128), 1e-10))
    A = T.A_star
    errs = (abs(A[0, 0] - sqrt(3)), abs(A[1, 1] - 2), abs(A[2, 2] - 2))
    report(1, max(errs) <= 1e-3,
           f"A*11={A[0, 0]:.6f} A*22={A[1, 1]:.6f} A*33={A[2, 2]:.6f} max err {max(errs):.2e}", t0)


def test_criterion_2_corrector_identity(report):
    t0 = time.perf_counter()
    cs = correctors(layered_sine_field(3), TorusGrid(3, 64), 1e-10)
    rng = np.random.default_rng(2)
    err = max(np.abs(q_tensor(cs, x, y) - q_tensor_oracle(cs, x, y)).max()
              for x, y in rng.uniform(0, 1, (20, 2, 3)))
    report(2, err <= 1e-4, f"max |q - oracle| over 20 pairs = {err:.2e}", t0)


def test_criterion_3_shell_cancellation(report):
    t0 = time.perf_counter()
    ratios = []
    for m in range(1, 5):
        st = shell_stats(m, np.eye(3))
        ratios.append(np.abs(st.S).max() / st.scale)
    report(3, max(ratios) <= 1e-12, f"max |S_m| / scale over m=1..4 = {max(ratios):.2e}", t0)


def test_criterion_4_anisotropic_decay(report):
    t0 = time.perf_counter()
    rows = shell_decay_certificate(np.diag([1.0, 2.0, 3.0]), 6)
    ratios = [r.ratio for r in rows[3:]]  # ||S_{m+1}|| / ||S_m|| for m = 2..5
    abs_sums = [r.abs_sum for r in rows[1:]]
    flat = min(abs_sums) >= 0.5 * max(abs_sums)
    ok = max(ratios) <= 0.75 and flat
    report(4, ok, f"max ratio {max(ratios):.3f}; per-shell abs sums "
           f"{min(abs_sums):.3f}..{max(abs_sums):.3f} (no decay)", t0)


@pytest.fixture(scope="module")
def decompositions():
    t0 = time.perf_counter()
    eye = identity_field(3)
    ctx = HTermContext.analytic(np.eye(3))
    g = TorusGrid(3, 64)
    ys = [X_PAIR - z for z in Z_PAIRS]
    tabs = periodic_green_many(eye, 1, g, ys, 1e-10)
    out = []
    for y, tab in zip(ys, tabs):
        rep = decompose(ctx, X_PAIR, y, 3, np.eye(3))
        direct = tab(X_PAIR[None])[0]
        out.append((rep, direct))
    return out, time.perf_counter() - t0


def test_criterion_5_decomposition_equality(report, decompositions):
    runs, elapsed = decompositions
    t0 = time.perf_counter() - elapsed
    rel = [abs(rep.value - g) / abs(g) for rep, g in runs]
    report(5, max(rel) <= 0.02, f"max |S_3 - G| / |G| over 10 pairs = {max(rel):.2e}", t0)


def test_criterion_6_shell_decay(report, decompositions):
    t0 = time.perf_counter()
    betas = [fit_beta(rep.m[1:], rep.T[1:]) for rep, _ in decompositions[0]]
    report(6, min(betas) > 0, f"beta_hat range {min(betas):.2f}..{max(betas):.2f}", t0)


def test_criterion_7_mean_zero(report):
    t0 = time.perf_counter()
    ctx = HTermContext.analytic(np.eye(3))
    norm_grid = TorusGrid(3, 4)
    r2 = verify_mean_zero(ctx, X_PAIR, 2, np.eye(3), norm_grid)
    r3 = verify_mean_zero(ctx, X_PAIR, 3, np.eye(3), norm_grid)
    ratio = abs(r3.residual) / abs(r2.residual)
    ok = ratio <= 0.7 and r3.relative <= 0.05
    report(7, ok, f"residual M=2 {r2.residual:.2e}, M=3 {r3.residual:.2e}, ratio {ratio:.3g}, "
           f"final/||S|| {r3.relative:.2e}", t0)


def test_criterion_8_pointwise_estimates(report):
    t0 = time.perf_counter()
    fam = green_family(layered_sine_field(3), TorusGrid(3, 64), [1, 2, 4])
    parts, ok = [], True
    for q in QUANTITIES:
        p = decay_fit(fam, q).p_pooled
        s = uniformity_from_family(fam, q).spread
        ok &= abs(p - target_exponent(q, 3)) <= 0.3 and s <= 2.0
        parts.append(f"{q} p={p:.3f} spread={s:.3f}")
    report(8, ok, "; ".join(parts), t0)


def test_criterion_9_two_dimensions(report):
    t0 = time.perf_counter()
    f2 = identity_field(2)
    g = TorusGrid(2, 128)
    tab = periodic_green(f2, 1, g, [0, 0], 1e-12)
    gap = sup_relative_gap(green_2d_from_3d(f2, g, [0, 0], tol=1e-12), tab)
    C1 = log_bound_check_2d(tab).C_max
    C2 = log_bound_check_2d(periodic_green(f2, 1, TorusGrid(2, 256), [0, 0], 1e-12)).C_max
    drift = abs(C2 - C1) / C1
    report(9, gap <= 0.02 and drift <= 0.1,
           f"3D-trick gap {gap:.2e}; C_max {C1:.4f} (N=128) vs {C2:.4f} (N=256), drift {drift:.2e}",
           t0)


def _manufactured_error(N):
    g = TorusGrid(3, N)
    X = g.coords()
    s1, c1 = np.sin(2 * np.pi * X[..., 0]), np.cos(2 * np.pi * X[..., 0])
    c2 = np.cos(2 * np.pi * X[..., 1])
    u = s1 * c2
    # -div((2 + sin 2 pi x1) grad u)
    rhs = -4 * np.pi**2 * c1**2 * c2 + 8 * np.pi**2 * (2 + s1) * u
    sol = solve(assemble(layered_sine_field(3), 1, g), GridFunction(g, rhs), 1e-12)
    return np.abs(sol.values - u).max()


def test_criterion_10_structural_identities(report):
    t0 = time.perf_counter()
    skew = skew_test_field(3)
    g = TorusGrid(3, 8)
    tol = 1e-12
    tabs = periodic_green_many(skew, 1, g, g.coords().reshape(-1, 3), tol)
    M = np.stack([t.values.ravel() for t in tabs])  # M[y, x]
    mean_y = np.abs(M.mean(axis=0)).max() / np.abs(M).max()
    # transpose identity on a finer grid
    g2 = TorusGrid(3, 16)
    x, y = np.array([0.25, 0.125, 0.5]), np.array([0.0, 0.375, 0.0625])
    tol2 = 1e-10
    G = periodic_green(skew, 1, g2, y, tol2)
    GT = periodic_green(skew.transpose(), 1, g2, x, tol2)
    trans = abs(G.node_value(x) - GT.node_value(y)) / np.abs(G.values).max()
    # discrete self-adjointness for a symmetric field
    op = assemble(layered_sine_field(3), 1, g2)
    u, v = np.random.default_rng(10).standard_normal((2,) + g2.shape)
    sa = abs(np.vdot(op.matvec(u), v) - np.vdot(u, op.matvec(v))) * g2.h**2 / (
        np.linalg.norm(u) * np.linalg.norm(v))
    e = [_manufactured_error(N) for N in (16, 32, 64)]
    rates = [a / b for a, b in zip(e, e[1:])]
    ok = (mean_y <= 1e-8 and trans <= 10 * tol2 and sa <= 1e-10
          and all(3.2 <= r <= 4.8 for r in rates))
    report(10, ok, f"mean in y {mean_y:.1e}; transpose {trans:.1e}; self-adjoint {sa:.1e}; "
           f"error ratios {rates[0]:.2f}, {rates[1]:.2f}", t0)
