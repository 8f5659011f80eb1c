from itertools import permutations, product

import numpy as np
import pytest

from pergreen.shells import (ShellError, enumerate_shell, omega_integral, shell_decay_certificate,
                             shell_hessian_sum, shell_index, shell_stats, write_certificate)

ANISO = np.diag([1.0, 2.0, 3.0])


def test_shell_index_examples():
    assert shell_index([0, 0, 0], np.eye(3)) == 0
    assert shell_index([0, 0, 0], ANISO) == 0
    assert shell_index([2, 0, 0], np.eye(3)) == 1
    assert shell_index([2, 0, 0], np.diag([4.0, 1, 1])) == 0
    assert shell_index([1, 1, 1], np.eye(3)) == 0
    assert shell_index([4, 0, 0], np.eye(3)) == 2
    assert shell_index([3, 3, 3], np.eye(3)) == 2  # 27 in [16, 64)


def test_small_shell_counts():
    assert enumerate_shell(0, np.eye(3)).count == 27
    assert enumerate_shell(0, np.eye(2)).count == 9


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("Q", ["iso", "aniso"])
def test_partition_of_box(d, Q):
    form = np.eye(d) if Q == "iso" else np.diag(np.arange(1.0, d + 1))
    Qi = np.linalg.inv(form)
    shells = [enumerate_shell(m, form).points for m in range(5)]
    allpts = np.concatenate(shells)
    assert len({tuple(p) for p in allpts}) == len(allpts)
    w = int(np.ceil(32 * np.sqrt(np.diag(form)).max()))
    g = np.stack(np.meshgrid(*[np.arange(-w, w + 1)] * d, indexing="ij"), -1).reshape(-1, d)
    v = np.einsum("ni,ij,nj->n", g, Qi, g)
    inside = g[v < 4.0**5]
    assert len(inside) == len(allpts)
    for m, pts in enumerate(shells):
        vm = np.einsum("ni,ij,nj->n", pts, Qi, pts)
        assert np.all(vm < 4.0 ** (m + 1))
        if m:
            assert np.all(vm >= 4.0**m)


def test_shell_index_consistent_with_membership():
    form = np.diag([1.0, 2.0])
    shells = {m: {tuple(p) for p in enumerate_shell(m, form).points} for m in range(6)}
    for k in product(range(-64, 65, 3), repeat=2):
        m = shell_index(k, form)
        if m <= 5:
            assert k in shells[m]


def test_signed_permutation_closure():
    pts = {tuple(p) for p in enumerate_shell(2, np.eye(3)).points}
    for perm in permutations(range(3)):
        for signs in product((-1, 1), repeat=3):
            mapped = {tuple(np.array(signs) * np.array(p)[list(perm)]) for p in pts}
            assert mapped == pts


def test_rejects_bad_forms():
    with pytest.raises(ShellError):
        enumerate_shell(1, np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ShellError):
        enumerate_shell(1, np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ShellError):
        enumerate_shell(-1, np.eye(2))


def test_isotropic_cancellation():
    for m in (1, 2):
        st = shell_stats(m, np.eye(3))
        assert np.abs(st.S).max() <= 1e-12 * st.scale
        assert np.abs(shell_hessian_sum(m, np.eye(3))).max() <= 1e-12 * st.scale


def test_orbit_grouping_matches_naive():
    a = shell_hessian_sum(3, ANISO)
    b = shell_hessian_sum(3, ANISO, orbit_grouped=True)
    assert np.abs(a - b).max() <= 1e-11 * np.abs(a).max()


def test_certificate_anisotropic(tmp_path):
    rows = shell_decay_certificate(ANISO, 5)
    for r in rows[3:]:
        assert r.ratio <= 0.75
    sums = [r.abs_sum for r in rows[1:]]
    assert min(sums) >= 0.5 * max(sums)
    path = write_certificate(rows, tmp_path / "cert.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("m,count,S_00")
    assert len(lines) == len(rows) + 1


def test_certificate_needs_depth():
    with pytest.raises(ShellError):
        shell_decay_certificate(np.eye(3), 1)


def test_omega_surface_cancellation():
    I = omega_integral(ANISO, 4.0)
    assert np.abs(I).max() <= 1e-6
    E = omega_integral(ANISO, 4.0, measure="euclidean")
    off = E - np.diag(np.diag(E))
    assert np.abs(off).max() <= 1e-6
