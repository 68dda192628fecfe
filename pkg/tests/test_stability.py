import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import FROZEN
from wavemap_lab.errors import ZeroDenominator
from wavemap_lab.geometry import EllipseMetric, EquivarianceClass, SphereMetric
from wavemap_lab.radial import RadialFunction
from wavemap_lab.stability import (classify, equator_coupling, hardy_constant, hardy_near_optimizer,
                                   hardy_ratio, hardy_threshold, jager_kaul_threshold,
                                   local_criterion, rayleigh_minimum, second_variation_eh,
                                   second_variation_ee)

S = SphereMetric()


def poly(coef):
    """Polynomial sum c_j r^j with its derivative."""
    c = np.asarray(coef, float)
    p = np.polynomial.Polynomial(c)
    return RadialFunction(p, p.deriv(), "poly")


ONE_MINUS_R = poly([1, -1])
ONE_MINUS_R2 = poly([1, 0, -1])


def test_local_criterion_sphere_d3():
    rep = local_criterion(S, EquivarianceClass(3))
    assert rep.q_star == pytest.approx(-2.0)
    assert rep.threshold == pytest.approx(-0.25)
    assert rep.verdict == "Unstable" and rep.local_min_ee == "Unstable"
    assert rep.rayleigh_ee < 0 and rep.rayleigh_eh < 0
    assert not rep.strichartz_ok


def test_local_criterion_sphere_d7():
    rep = local_criterion(S, EquivarianceClass(7))
    assert rep.q_star == pytest.approx(-6.0)
    assert rep.threshold == pytest.approx(-6.25)
    assert rep.verdict == "Stable"
    assert rep.rayleigh_ee > 0 and rep.rayleigh_eh > 0
    assert rep.strichartz_ok


def test_local_criterion_ellipse_095_d7():
    rep = local_criterion(EllipseMetric(0.95), EquivarianceClass(7))
    assert rep.q_star == pytest.approx(-6 / 0.9025, rel=1e-8)
    assert rep.verdict == "Unstable"


def test_report_json_field_names():
    rep = local_criterion(S, EquivarianceClass(5))
    assert set(json.loads(rep.to_json())) == {"q_star", "threshold", "verdict",
                                              "rayleigh_ee", "rayleigh_eh",
                                              "strichartz_ok"}


def test_marginal_band():
    assert classify(-6.25, -6.25) == "Marginal"
    assert classify(-6.25 + 5e-11, -6.25) == "Marginal"
    assert classify(-6.25 + 1e-9, -6.25) == "Stable"
    assert classify(-6.25 - 1e-9, -6.25) == "Unstable"


def test_jager_kaul_values():
    assert jager_kaul_threshold(3) == FROZEN["jk_d3"]
    assert jager_kaul_threshold(7) == pytest.approx(FROZEN["jk_d7"], abs=1e-15)
    vals = [jager_kaul_threshold(d) for d in range(4, 40)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_second_variation_examples():
    zero = poly([0.0])
    assert second_variation_ee(S, EquivarianceClass(3), zero) == 0.0
    assert second_variation_eh(S, EquivarianceClass(3), zero) == 0.0
    assert second_variation_ee(S, EquivarianceClass(7), ONE_MINUS_R) == pytest.approx(
        FROZEN["sv_ee_d7_one_minus_r"], abs=1e-10)
    assert second_variation_ee(S, EquivarianceClass(3), ONE_MINUS_R) == pytest.approx(
        FROZEN["sv_ee_d3_one_minus_r"], abs=1e-10)


def test_second_variation_eh_d3():
    # the integrand (4 r^2 - 2 (1 - r^2)) has value -8/15 once the r^2
    # measure is applied to the gradient term only
    val = second_variation_eh(S, EquivarianceClass(3), ONE_MINUS_R2)
    assert val == pytest.approx(FROZEN["sv_eh_d3_one_minus_r2"], abs=1e-10)


def test_second_variation_tolerance_check():
    val = second_variation_ee(S, EquivarianceClass(7), ONE_MINUS_R, tol=1e-8)
    assert val == pytest.approx(3 / 35, abs=1e-10)


def test_eh_rayleigh_small_basis_d7_nonnegative():
    assert rayleigh_minimum(7, -6.0, True, size=10) >= 0.0


def test_hardy_examples():
    assert hardy_ratio(3, ONE_MINUS_R) == pytest.approx(FROZEN["hardy_d3_one_minus_r"],
                                                        abs=1e-10)
    with pytest.raises(ZeroDenominator):
        hardy_ratio(5, poly([0.0]))
    ratios = [hardy_ratio(3, hardy_near_optimizer(3, e)) for e in (0.2, 0.1, 0.05)]
    assert all(r < 4.0 for r in ratios)
    assert ratios[0] < ratios[1] < ratios[2]


def test_hardy_constants():
    for d in range(3, 10):
        assert hardy_constant(d) == pytest.approx(-1.0 / hardy_threshold(d))


@given(st.integers(3, 9), st.lists(st.floats(-2, 2), min_size=1, max_size=5),
       st.sampled_from(["Elliptic", "Hyperbolic"]))
def test_hardy_bound_never_exceeded(d, coef, variant):
    # w = (1 - r)^2 * polynomial: admissible for both variants when d <= 9
    c = np.polynomial.Polynomial(coef) * np.polynomial.Polynomial([1, -1]) ** 2
    if np.allclose(c.coef, 0):
        return
    w = RadialFunction(c, c.deriv(), "w")
    if variant == "Hyperbolic":
        # decay (1 - r^2)^((d+1)/4) at r = 1 keeps the hyperbolic weight integrable
        b = (d + 1) / 4.0
        w = RadialFunction(lambda r: c(r) * (1 - r * r) ** b,
                           lambda r: c.deriv()(r) * (1 - r * r) ** b
                           - 2 * b * r * c(r) * (1 - r * r) ** (b - 1), "w")
    try:
        ratio = hardy_ratio(d, w, variant)
    except ZeroDenominator:
        return
    assert ratio <= hardy_constant(d) + 1e-6


@given(st.floats(0.2, 1.0), st.integers(3, 9))
def test_verdict_matches_threshold_algebra(a, d):
    q = -(d - 1) / a**2
    thr = hardy_threshold(d)
    if abs(q - thr) < 1e-8:
        return
    rep_q = equator_coupling(EllipseMetric(a), EquivarianceClass(d))
    assert classify(rep_q, thr) == classify(q, thr)
