import json

import numpy as np
import pytest

from oracles import ewald_periodic_laplace
from pergreen.coeff_fields import identity_field, layered_sine_field
from pergreen.estimates import (QUANTITIES, FitError, decay_fit, default_radii, directions,
                                green_family, log_bound_check_2d, sample_magnitude,
                                sup_relative_gap, target_exponent, uniformity_from_family,
                                uniformity_report, write_fit_csv, write_summary)
from pergreen.green import derivative_tables, green_2d_from_3d, periodic_green
from pergreen.torus import ResolutionError, TorusGrid

G64 = TorusGrid(3, 64)


@pytest.fixture(scope="module")
def eye_family(eye3):
    return green_family(eye3, G64, [1, 2, 4])


@pytest.fixture(scope="module")
def layered_family(layered3):
    return green_family(layered3, G64, [1, 2, 4])


def test_directions():
    for d, count in ((2, 8), (3, 26)):
        v = directions(d)
        assert v.shape == (count, d)
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0)
    assert target_exponent("mixed", 3) == -3 and target_exponent("value", 2) == 0


@pytest.mark.parametrize("quantity, lo, hi", [("value", -1.15, -0.85), ("grad_x", -2.2, -1.8),
                                              ("grad_y", -2.2, -1.8), ("mixed", -3.3, -2.7)])
def test_identity_exponents(eye_family, quantity, lo, hi):
    fit = decay_fit(eye_family, quantity)
    assert lo <= fit.p_pooled <= hi
    assert all(lo <= p <= hi for p in fit.p_hat.values())
    assert fit.r.size == 10 and fit.window[0] == pytest.approx(4 * G64.h)


def test_constant_field_is_uniform(eye_family):
    for q in QUANTITIES:
        assert uniformity_from_family(eye_family, q).spread == pytest.approx(1.0, abs=1e-12)


def test_layered_uniformity(layered_family):
    spreads = {q: uniformity_from_family(layered_family, q).spread for q in QUANTITIES}
    assert spreads["value"] <= 1.5
    assert max(spreads.values()) <= 2.0


def test_scaling_of_coefficients(layered3):
    a = green_family(layered3, G64, [1])
    b = green_family(layered3.scaled(3.0), G64, [1])
    for q in QUANTITIES:
        fa, fb = decay_fit(a, q), decay_fit(b, q)
        assert fb.p_pooled == pytest.approx(fa.p_pooled, abs=1e-8)
        assert 3 * fb.C_pooled == pytest.approx(fa.C_pooled, rel=0.01)


def test_grad_y_matches_grad_x_of_transpose(skew3):
    a = green_family(skew3, G64, [1])
    b = green_family(skew3.transpose(), G64, [1])
    r = default_radii(G64)
    ma = sample_magnitude(a.tables[1], "grad_y", G64, a.y, r)
    mb = sample_magnitude(b.tables[1], "grad_x", G64, b.y, r)
    np.testing.assert_allclose(ma, mb, rtol=0.05)


def test_grad_y_is_grad_x_with_roles_swapped(layered3):
    # symmetric A: d/dy G(x, y) at y = y0 equals d/dx G(., x) at y0
    g = TorusGrid(3, 32)
    y0 = np.zeros(3)
    tabs = derivative_tables(layered3, 1, g, y0, 1e-12)
    for x in ([0.25, 0.125, 0.0], [-0.125, 0.25, 0.375], [0.5, 0.5, 0.5]):
        x = np.array(x)
        other = derivative_tables(layered3, 1, g, x, 1e-12)
        a = tabs["grad_y"][(slice(None),) + g.index_of(x % 1.0)]
        b = other["grad_x"][(slice(None),) + g.index_of(y0)]
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-8 * np.abs(b).max())


def test_second_order_convergence_to_ewald(eye3):
    p = np.array([0.25, 0.125, 0.0])
    ref = ewald_periodic_laplace(p)
    err = [abs(periodic_green(eye3, 1, TorusGrid(3, N), [0, 0, 0], 1e-12)(p[None])[0] - ref)
           for N in (32, 64, 128)]
    assert err[0] / err[1] >= 3 and err[1] / err[2] >= 3


def test_fit_guards(eye_family, eye3):
    with pytest.raises(FitError):
        decay_fit(eye_family, "value", count=7)
    with pytest.raises(FitError):
        decay_fit(eye_family, "grad_x", r_min=G64.h)
    with pytest.raises(FitError):
        decay_fit(eye_family, "grad_x", r_max=0.5)
    with pytest.raises(FitError):
        decay_fit(eye_family, "hessian")
    with pytest.raises(FitError):
        green_family(eye3, G64, [])
    with pytest.raises(ResolutionError):
        green_family(eye3, TorusGrid(3, 16), [1, 4])


def test_uniformity_report_entry_point(eye3):
    rep = uniformity_report(eye3, TorusGrid(3, 32), [1, 2], "mixed")
    assert rep.exponent == -3 and rep.spread == pytest.approx(1.0)
    assert set(rep.C_hat) == {1, 2}


def test_writers(tmp_path, eye_family):
    fits = [decay_fit(eye_family, q) for q in ("value", "mixed")]
    reps = [uniformity_from_family(eye_family, q) for q in ("value", "mixed")]
    csv_path = write_fit_csv(fits, tmp_path / "fits.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "quantity,n,r,magnitude"
    assert len(lines) == 1 + 2 * 3 * 10
    data = json.loads(write_summary(fits, reps, tmp_path / "s.json").read_text())
    assert [s["quantity"] for s in data] == ["value", "mixed"]
    assert data[1]["uniformity"]["spread"] == pytest.approx(1.0)
    assert data[0]["p_raw_per_n"]


def test_log_bound_2d():
    f2 = identity_field(2)
    g = TorusGrid(2, 128)
    tab = periodic_green(f2, 1, g, [0, 0])
    lb = log_bound_check_2d(tab)
    assert lb.r[0] == pytest.approx(1 / 32) and lb.r[-1] == pytest.approx(0.25)
    assert 0 < lb.C_ls <= lb.C_max < 1
    via3 = green_2d_from_3d(f2, g, [0, 0])
    assert sup_relative_gap(via3, tab) <= 1e-8
    with pytest.raises(FitError):
        log_bound_check_2d(periodic_green(layered_sine_field(3), 1, TorusGrid(3, 16), [0, 0, 0]))
    with pytest.raises(FitError):
        log_bound_check_2d(periodic_green(f2, 1, TorusGrid(2, 32), [0, 0]))
