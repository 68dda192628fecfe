"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` (or plain ``pytest``;
the lines are repeated in the terminal summary).
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.optimize import bisect

from oracles import FROZEN
from wavemap_lab.energy import energy_ee, energy_eh
from wavemap_lab.geometry import EllipseMetric, EquivarianceClass, SphereMetric
from wavemap_lab.profiles import (bump, classify_endpoint, integrate_profile,
                                  profile_with_jump, shoot_smooth_profile,
                                  weak_ode_residual)
from wavemap_lab.radial import RadialFunction
from wavemap_lab.stability import (hardy_constant, hardy_near_optimizer, hardy_ratio,
                                   jager_kaul_threshold, local_criterion)
from wavemap_lab.wave import (EQUALITY_TOL, integrability_exponent,
                              nonuniqueness_exhibit, refinement_study)

S = SphereMetric()
C3 = EquivarianceClass(3)
SUMMARY = {}


@contextmanager
def criterion(n, title):
    info = {}
    try:
        yield info
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        SUMMARY[n] = f"criterion {n:2d} FAIL  {title}: {msg}"
        print(SUMMARY[n])
        raise
    detail = ", ".join(f"{k}={v}" for k, v in info.items())
    SUMMARY[n] = f"criterion {n:2d} PASS  {title} ({detail})"
    print(SUMMARY[n])


def _fmt(x):
    return f"{x:.3g}"


@pytest.fixture(scope="module")
def shatah():
    return integrate_profile(S, C3, 2.0)


def test_criterion_01_closed_form_profile():
    with criterion(1, "closed-form profile") as info:
        t = time.perf_counter()
        p = shoot_smooth_profile(S, C3)
        elapsed = time.perf_counter() - t
        rho = np.linspace(0.0, 1.0, 4001)[:-1]
        err = float(np.max(np.abs(p(rho) - 2 * np.arctan(rho))))
        err = max(err, abs(p.psi_one - math.pi / 2))
        info.update(alpha=f"{p.alpha:.8f}", sup_error=_fmt(err), seconds=f"{elapsed:.2f}")
        assert abs(p.alpha - 2.0) <= 1e-4
        assert err <= 1e-6
        assert elapsed < 5.0


def test_criterion_02_energy_landmarks(shatah):
    with criterion(2, "energy landmarks") as info:
        e_eq = energy_ee(S, C3, "equator")
        e_sh = energy_ee(S, C3, shatah)
        h_sh = energy_eh(S, C3, shatah)
        errs = [abs(e_eq - FROZEN["ee_equator_d3"]), abs(e_sh - FROZEN["ee_shatah_d3"]),
                abs(h_sh - FROZEN["eh_shatah_d3"])]
        info.update(ee_equator=f"{e_eq:.10f}", ee_profile=f"{e_sh:.10f}",
                    eh_profile=f"{h_sh:.10f}", max_error=_fmt(max(errs)))
        assert max(errs) <= 1e-6
        assert h_sh < 0.0


def test_criterion_03_criterion_thresholds():
    with criterion(3, "criterion thresholds") as info:
        r6 = local_criterion(S, EquivarianceClass(6))
        r7 = local_criterion(S, EquivarianceClass(7))
        assert (r6.verdict, r7.verdict) == ("Unstable", "Stable")
        assert r6.q_star == pytest.approx(-5.0) and r7.q_star == pytest.approx(-6.0)
        c7 = EquivarianceClass(7)

        def status(a2):
            return 1.0 if local_criterion(EllipseMetric(math.sqrt(a2)), c7,
                                          basis_size=4).verdict == "Stable" else -1.0

        a2 = bisect(status, 0.9, 1.0, xtol=1e-11)
        info.update(flip_a2=f"{a2:.10f}", jager_kaul=jager_kaul_threshold(7))
        assert jager_kaul_threshold(7) == 24 / 25
        assert abs(a2 - 0.96) <= 1e-8


def test_criterion_04_rayleigh_sign_agreement():
    with criterion(4, "Rayleigh sign agreement") as info:
        t = time.perf_counter()
        metrics = [S] + [EllipseMetric(a) for a in (0.9, 0.95, 0.98, 1.0)]
        checked = disagree = 0
        for m in metrics:
            for d in range(3, 10):
                rep = local_criterion(m, EquivarianceClass(d))
                if rep.verdict == "Marginal":
                    continue
                want = 1.0 if rep.q_star > rep.threshold else -1.0
                checked += 1
                ok = (np.sign(rep.rayleigh_ee) == want and np.sign(rep.rayleigh_eh) == want)
                disagree += not ok
        elapsed = time.perf_counter() - t
        info.update(combinations=checked, disagreements=disagree,
                    seconds=f"{elapsed:.2f}")
        assert checked == 35 and disagree == 0
        assert elapsed < 60.0


def _random_admissible(rng, d):
    """Either ``(1 - r)^2`` times a random cubic, or ``r^p - r`` with ``p``
    above the integrability limit ``-(d-2)/2``."""
    if rng.random() < 0.5:
        c = np.polynomial.Polynomial(rng.uniform(-2, 2, 4)) * np.polynomial.Polynomial([1, -1]) ** 2
        return RadialFunction(c, c.deriv(), "poly")
    p = -(d - 2) / 2.0 + rng.uniform(0.01, 2.5)
    return RadialFunction(lambda r: r**p - r, lambda r: p * r ** (p - 1) - 1, "power")


def test_criterion_05_hardy_sharpness():
    with criterion(5, "Hardy sharpness") as info:
        rng = np.random.default_rng(5)
        worst = -np.inf
        for d in range(3, 10):
            bound = hardy_constant(d)
            for _ in range(100):
                ratio = hardy_ratio(d, _random_admissible(rng, d))
                worst = max(worst, ratio - bound)
        near = hardy_ratio(3, hardy_near_optimizer(3, 0.005)) / hardy_constant(3)
        info.update(max_excess=_fmt(worst), near_optimizer_fraction=f"{near:.4f}")
        assert worst <= 1e-6
        assert near >= 0.95


def test_criterion_06_energy_equality(shatah):
    with criterion(6, "energy equality") as info:
        study = refinement_study(shatah, S, C3)
        res = [lvl["max_residual"] for lvl in study["levels"]]
        got, expected = integrability_exponent(shatah, S, C3)
        info.update(residuals="/".join(_fmt(r) for r in res), order=f"{study['order']:.3f}",
                    exponent=f"{got:.3f}")
        assert res[0] > res[1] > res[2]
        assert study["order"] >= 1.0
        assert abs(got - expected) <= 0.1 and expected == -0.5


def test_criterion_07_nonuniqueness(shatah):
    with criterion(7, "nonuniqueness exhibit") as info:
        ex = nonuniqueness_exhibit(S, C3, profile=shatah)
        info.update(sup_difference=f"{ex['sup_difference_in_cone']:.4f}",
                    equator_residual=_fmt(ex["equator_max_residual"]),
                    self_similar_residual=_fmt(ex["self_similar_max_residual"]))
        assert ex["identical_data_off_centre"]
        assert ex["sup_difference_in_cone"] >= 1.0
        assert ex["equator_max_residual"] <= EQUALITY_TOL
        assert ex["self_similar_max_residual"] <= EQUALITY_TOL


def test_criterion_08_monotone_quantity():
    with criterion(8, "M monotone") as info:
        rng = np.random.default_rng(8)
        worst_rise = worst_origin = 0.0
        for _ in range(50):
            metric = S if rng.random() < 0.5 else EllipseMetric(0.9)
            cls = EquivarianceClass(int(rng.integers(3, 8)))
            p = integrate_profile(metric, cls, float(rng.uniform(0.1, 5.0)))
            worst_rise = max(worst_rise, float(np.max(np.diff(p.m_series), initial=0.0)))
            worst_origin = max(worst_origin, abs(float(p.m_series[0])))
        info.update(max_increase=_fmt(worst_rise), max_origin_value=_fmt(worst_origin))
        assert worst_rise <= 1e-8
        assert worst_origin <= 1e-12


def test_criterion_09_jump_condition():
    with criterion(9, "jump condition") as info:
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(20):
            d = int(rng.integers(3, 8))
            a = float(rng.uniform(-1.0, 1.0))
            f = bump(center=float(rng.uniform(0.7, 1.3)), width=float(rng.uniform(0.4, 0.8)),
                     height=float(rng.uniform(0.5, 2.0)), tilt=float(rng.uniform(-1.0, 1.0)))
            base = integrate_profile(S, EquivarianceClass(d), float(rng.uniform(0.3, 3.0)))
            res = weak_ode_residual(profile_with_jump(base, a), f)
            worst = max(worst, abs(res - (d - 1) * a * float(f.f(np.array([1.0]))[0])))
        base = integrate_profile(S, C3, 1.3)
        zero = abs(weak_ode_residual(profile_with_jump(base, 0.0), bump(1.0, 0.6)))
        info.update(max_error=_fmt(worst), zero_jump=_fmt(zero))
        assert worst <= 1e-6
        assert zero < 1e-8


def test_criterion_10_besov_profile():
    with criterion(10, "log-Besov profile") as info:
        p = integrate_profile(S, C3, 1.0)
        ep = classify_endpoint(p)
        rel = abs(ep.slope - ep.predicted_slope) / abs(ep.predicted_slope)
        info.update(kind=ep.kind, slope=f"{ep.slope:.5f}",
                    predicted=f"{ep.predicted_slope:.5f}", rel_error=_fmt(rel))
        assert ep.kind == "LogBesov"
        assert rel <= 0.05


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
