import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import FROZEN
from wavemap_lab.energy import (CORE_RADIUS, EnergyReport, d3_identity_value,
                                energy_ee, energy_eh, equator_minimality_evidence,
                                equator_perturbations, minimize_ee, minimize_eh)
from wavemap_lab.errors import BoundaryMismatch, DivergentEnergy, NonConvergence
from wavemap_lab.geometry import EllipseMetric, EquivarianceClass, SphereMetric
from wavemap_lab.profiles import integrate_profile, shoot_smooth_profile
from wavemap_lab.radial import RadialFunction

S = SphereMetric()
C3 = EquivarianceClass(3)
C7 = EquivarianceClass(7)


@pytest.fixture(scope="module")
def shatah():
    return integrate_profile(S, C3, 2.0)


@pytest.fixture(scope="module")
def eh_d3():
    return minimize_eh(S, C3, lambda r: S.phi_star * r, seed=0)


class _Singular:
    """psi = r^(-1/2): the gradient term is not integrable at 0 in d = 3."""

    def evaluate(self, r, x):
        return r ** -0.5, -0.5 * r ** -1.5


# --- closed-form values ----------------------------------------------------------

def test_ee_examples(shatah):
    assert energy_ee(S, C3, "equator") == pytest.approx(FROZEN["ee_equator_d3"], abs=1e-12)
    assert energy_ee(S, C3, shatah) == pytest.approx(FROZEN["ee_shatah_d3"], abs=1e-10)
    assert energy_ee(S, C3, 0.0) == 0.0
    assert energy_ee(S, C7, "equator") == pytest.approx(FROZEN["ee_equator_d7"], abs=1e-12)


def test_eh_examples(shatah):
    assert energy_eh(S, C3, "equator") == 0.0
    assert energy_eh(S, C3, shatah) == pytest.approx(FROZEN["eh_shatah_d3"], abs=1e-10)


def test_ee_divergent_core():
    with pytest.raises(DivergentEnergy):
        energy_ee(S, C3, _Singular())


def test_eh_boundary_mismatch(shatah):
    with pytest.raises(BoundaryMismatch):
        energy_eh(S, C3, 1.0)
    r = np.linspace(0, 1, 201)
    with pytest.raises(BoundaryMismatch):
        energy_eh(S, C3, (r, S.phi_star * r + 1e-5))


def test_eh_negative_on_ee_minimizer():
    rep = minimize_ee(S, C3, S.phi_star)
    f = RadialFunction.from_samples(rep.grid, rep.psi)
    assert energy_ee(S, C3, f) <= energy_ee(S, C3, "equator")
    assert energy_eh(S, C3, f) < 0.0


@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.integers(1, 3))
@settings(max_examples=15)
def test_d3_identity(c1, c2, ell):
    cls = EquivarianceClass(3, ell)
    r = np.linspace(0.0, 1.0, 401)
    psi = S.phi_star * r**ell + c1 * np.sin(np.pi * r) * r + c2 * np.sin(2 * np.pi * r) * r
    f = RadialFunction.from_samples(r, psi)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        val = energy_eh(S, cls, f)
    assert val == pytest.approx(d3_identity_value(S, cls, f), abs=1e-8)


def test_d3_identity_ellipse():
    m = EllipseMetric(0.7)
    r = np.linspace(0.0, 1.0, 401)
    f = RadialFunction.from_samples(r, m.phi_star * np.sin(0.5 * np.pi * r))
    assert energy_eh(m, C3, f, check_identity=False) == pytest.approx(
        d3_identity_value(m, C3, f), abs=1e-8)


# --- minimisation -----------------------------------------------------------------

def test_minimize_eh_d3_ramp(eh_d3):
    assert eh_d3.converged
    assert eh_d3.value <= FROZEN["eh_shatah_d3"] + 1e-6
    assert eh_d3.value <= eh_d3.equator_value
    assert eh_d3.boundary_value == S.phi_star and eh_d3.psi[-1] == S.phi_star
    assert eh_d3.psi[0] == 0.0


def test_minimize_eh_d7_perturbations():
    for i, init in enumerate(equator_perturbations(S, 5, seed=1)):
        rep = minimize_eh(S, C7, init, seed=1)
        assert rep.value >= -1e-6, i
        assert rep.value <= rep.equator_value + 1e-12


def test_minimize_eh_boundary_mismatch():
    with pytest.raises(BoundaryMismatch):
        minimize_eh(S, C3, lambda r: r)


def test_minimize_ee_d3_beats_equator():
    rep = minimize_ee(S, C3, S.phi_star)
    assert rep.value <= FROZEN["ee_shatah_d3"] < FROZEN["ee_equator_d3"]
    assert rep.minimizer == "GridFunction"


def test_minimize_ee_d7_equator():
    rep = minimize_ee(S, C7, S.phi_star)
    assert rep.value == pytest.approx(FROZEN["ee_equator_d7"], abs=1e-6)
    assert rep.minimizer == "ConstantEquator"
    assert rep.sup_distance_outside_core < 1e-4


def test_minimize_ee_zero_boundary():
    rep = minimize_ee(S, C3, 0.0)
    assert rep.value == 0.0
    assert np.all(rep.psi == 0.0)


def test_nonconvergence_carries_best_iterate():
    with pytest.raises(NonConvergence) as info:
        minimize_ee(S, C3, S.phi_star, max_iter=3)
    best = info.value.best
    assert isinstance(best, EnergyReport) and best.iterations == 3


def test_descent_history_monotone(eh_d3):
    for hist in (eh_d3.history, minimize_ee(S, C3, 1.0).history):
        assert len(hist) > 2
        assert np.all(np.diff(hist) <= 0.0)


def test_grid_refinement_converges():
    vals = [minimize_ee(S, C3, S.phi_star, grid=n).value for n in (201, 401, 801, 1601)]
    diffs = np.abs(np.diff(vals))
    assert np.all(diffs[1:] < diffs[:-1])
    assert diffs[-1] < 1e-6
    # second order: halving h divides the increment by about 4
    assert diffs[-2] / diffs[-1] > 3.0


def test_runs_deterministic():
    init = equator_perturbations(S, 1, seed=3)[0]
    a = minimize_eh(S, C7, init, seed=3)
    b = minimize_eh(S, C7, init, seed=3)
    assert a.value == b.value and np.array_equal(a.psi, b.psi)


# --- minimality evidence ----------------------------------------------------------------

def test_equator_evidence_d7():
    ev = equator_minimality_evidence(S, C7, n_inits=10, seed=0)
    assert ev["holds"] and ev["all_land_on_equator"] and not ev["energy_below_equator"]
    assert ev["seed"] == 0 and len(ev["runs"]) == 10
    assert ev["max_sup_distance_outside_core"] < 1e-4
    assert ev["min_value"] >= ev["equator_value"] - 1e-8


def test_equator_evidence_d3_fails():
    ev = equator_minimality_evidence(S, C3, n_inits=3, seed=0)
    assert not ev["holds"] and ev["energy_below_equator"]


def test_perturbations_seeded_and_pinned():
    a = equator_perturbations(S, 4, seed=7)
    b = equator_perturbations(S, 4, seed=7)
    r = np.linspace(0, 1, 11)
    for f, g in zip(a, b):
        assert np.array_equal(f(r), g(r))
        assert f(np.array([1.0]))[0] == pytest.approx(S.phi_star, abs=1e-12)
        assert f(np.array([0.0]))[0] == pytest.approx(S.phi_star, abs=1e-12)


# --- bridge to the shooting solver --------------------------------------------------------

def test_negative_minimum_matches_shot_profile(eh_d3):
    assert eh_d3.value < 0.0
    assert eh_d3.euler_lagrange_residual < 1e-6
    shot = shoot_smooth_profile(S, C3, (0.5, 4.0))
    rho = eh_d3.grid[:-1]
    assert np.max(np.abs(eh_d3.psi[:-1] - shot(rho))) < 1e-3


# --- exports -----------------------------------------------------------------------

def test_report_exports(tmp_path, eh_d3):
    eh_d3.write_json(tmp_path / "r.json")
    eh_d3.write_csv(tmp_path / "r.csv")
    meta = json.loads((tmp_path / "r.json").read_text(encoding="utf-8"))
    for key in ("functional", "value", "boundary_value", "minimizer",
                "euler_lagrange_residual", "seed", "core_radius"):
        assert key in meta
    assert meta["core_radius"] == CORE_RADIUS and meta["seed"] == 0
    lines = (tmp_path / "r.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "rho,psi"
    assert len(lines) == eh_d3.grid.size + 1
    r0, p0 = map(float, lines[-1].split(","))
    assert r0 == 1.0 and p0 == pytest.approx(math.pi / 2)
