import numpy as np
import pytest

from oracles import ewald_periodic_laplace
from pergreen.coeff_fields import layered_sine_field
from pergreen.decomposition import (DecompositionReport, HTermContext, ProvenanceError,
                                    compare_with_direct, decompose, field_signature, fit_beta,
                                    h_term, h_terms, reduce_pair, shell_sum,
                                    verify_mean_zero)
from pergreen.green import DomainError, WindowError, periodic_green
from pergreen.shells import enumerate_shell
from pergreen.torus import TorusGrid

X0 = np.array([0.1, 0.0, 0.0])
Y0 = np.array([-0.2, 0.1, 0.0])
# midpoint rule on 80^6 points per double cell average, scripts/freeze_oracles.py
BRUTE_FORCE = {(3, 0, 0): 2.3812016941571201e-08,
               (1, 1, 0): 4.5272830829432009e-06,
               (2, -1, 1): -7.783099063504717e-08}


@pytest.fixture(scope="module")
def ctx_id():
    return HTermContext.analytic(np.eye(3))


@pytest.fixture(scope="module")
def layered_window():
    f = layered_sine_field(3)
    return HTermContext.windowed(f, 16, 1 / 8, np.zeros(3), with_mean_tables=True)


def test_constant_and_affine_hooks_vanish(rng):
    const = HTermContext.from_kernel(lambda x, y: np.full(np.shape(x)[:-1], 2.5), 3)
    c = rng.standard_normal(3)
    affine = HTermContext.from_kernel(lambda x, y: 1.0 + np.asarray(x) @ c + 0.0 * y[..., 0], 3)
    ks = enumerate_shell(1, np.eye(3)).points[:10]
    assert np.abs(h_terms(const, X0, Y0, ks)).max() == 0
    assert np.abs(h_terms(affine, X0, Y0, ks)).max() <= 1e-14


def test_against_brute_force(ctx_id):
    for k, ref in BRUTE_FORCE.items():
        assert h_term(ctx_id, X0, Y0, np.array(k)) == pytest.approx(ref, rel=1e-5, abs=1e-13)


def test_quadrature_refinement(ctx_id):
    ks = enumerate_shell(1, np.eye(3)).points[::17]
    a = h_terms(ctx_id.with_order(8), X0, Y0, ks)
    b = h_terms(ctx_id.with_order(16), X0, Y0, ks)
    assert np.all(np.abs(a - b) <= 1e-4 * np.abs(b))


def test_singular_pair_rejected(ctx_id):
    with pytest.raises(DomainError):
        h_term(ctx_id, X0, X0, np.zeros(3))
    with pytest.raises(DomainError):
        decompose(ctx_id, X0, X0 + np.array([1.0, 0, 0]), 1, np.eye(3))


def test_identity_decomposition(ctx_id):
    rep = decompose(ctx_id, X0, Y0, 3, np.eye(3))
    T = np.abs(rep.T)
    assert T[1] > T[2] > T[3]
    assert rep.beta_hat > 0
    assert rep.counts[0] == 27
    ref = ewald_periodic_laplace(X0 - Y0)
    assert rep.value == pytest.approx(ref, rel=1e-8)
    js = rep.to_json()
    assert [s["m"] for s in js["shells"]] == [0, 1, 2, 3]
    assert js["S"][-1] == rep.value


def test_reciprocity_of_partial_sums(ctx_id):
    a = decompose(ctx_id, X0, Y0, 2, np.eye(3)).value
    b = decompose(ctx_id, Y0, X0, 2, np.eye(3)).value
    assert a == pytest.approx(b, rel=1e-10)


def test_reduce_pair_and_translation(ctx_id):
    x, y = reduce_pair(X0, Y0 + np.array([2.0, -1.0, 0.0]))
    np.testing.assert_allclose(y, Y0)
    z = np.array([1.0, -2.0, 3.0])
    ks = enumerate_shell(0, np.eye(3)).points
    np.testing.assert_allclose(h_terms(ctx_id, X0 + z, Y0 + z, ks), h_terms(ctx_id, X0, Y0, ks),
                               rtol=1e-12, atol=1e-15)


def test_fit_beta():
    assert fit_beta([0, 1, 2, 3], [1.0, 0.5, 0.25, 0.125]) == pytest.approx(1.0)
    assert fit_beta([0, 1], [1.0, 0.5]) is None


def test_mean_zero_constant_hook():
    ctx = HTermContext.from_kernel(lambda x, y: np.full(np.shape(x)[:-1], 1.0), 3)
    r = verify_mean_zero(ctx, X0, 0, np.eye(3), TorusGrid(3, 4))
    assert r.residual == 0


def test_mean_zero_identity(ctx_id):
    r1 = verify_mean_zero(ctx_id, X0, 1, np.eye(3), TorusGrid(3, 4))
    assert abs(r1.residual) <= 1e-6 * r1.s_norm
    assert len(r1.per_shell) == 2


def test_compare_with_direct_self_and_provenance(eye3, layered3):
    tab = periodic_green(eye3, 1, TorusGrid(3, 16), [0.0, 0.0, 0.0])
    x = np.array([0.25, 0.125, 0.0])
    G = tab(x[None])[0]
    sig = field_signature(eye3)
    rep = DecompositionReport(x, np.zeros(3), [0], [G], [abs(G)], [1], [G], None, sig)
    err = compare_with_direct(rep, tab)
    assert err["abs"] == 0 and err["rel"] == 0
    other = periodic_green(layered3, 1, TorusGrid(3, 16), [0.0, 0.0, 0.0])
    with pytest.raises(ProvenanceError):
        compare_with_direct(rep, other)
    moved = periodic_green(eye3, 1, TorusGrid(3, 16), [0.125, 0.0, 0.0])
    with pytest.raises(ProvenanceError):
        compare_with_direct(rep, moved)


@pytest.mark.slow
def test_window_layered(layered_window, layered3):
    ctx = layered_window
    tensor = np.diag([np.sqrt(3), 2.0, 2.0])
    direct = periodic_green(layered3, 1, TorusGrid(3, 8), [0.0, 0.0, 0.0])
    for x in (np.array([0.25, 0.25, 0.125]), np.array([-0.25, 0.375, 0.25])):
        rep = decompose(ctx, x, np.zeros(3), 1, tensor)
        assert compare_with_direct(rep, direct)["rel"] <= 0.10
    with pytest.raises(WindowError) as exc:
        shell_sum(ctx, np.array([0.25, 0.25, 0.125]), np.zeros(3), 2, tensor)
    assert exc.value.required_L == 32
    # integer translation of both arguments
    ks = enumerate_shell(0, tensor).points
    a = h_terms(ctx, np.array([0.25, 0.25, 0.125]), np.zeros(3), ks[:5])
    b = h_terms(ctx, np.array([1.25, 0.25, 0.125]), np.array([1.0, 0.0, 0.0]), ks[:5])
    np.testing.assert_allclose(a, b, rtol=1e-12)
    with pytest.raises(ProvenanceError):
        h_terms(ctx, np.array([0.25, 0.25, 0.125]), np.array([0.125, 0, 0]), ks[:5])
    r = verify_mean_zero(ctx, np.array([0.25, 0.25, 0.125]), 1, tensor, TorusGrid(3, 4))
    assert r.relative <= 0.05
