import json
import math

import numpy as np
import pytest

from oracles import FROZEN
from wavemap_lab.errors import (CFLViolation, ConeOutOfDomain, NaNDetected,
                                ProfileNotMatching)
from wavemap_lab.geometry import EquivarianceClass, SphereMetric
from wavemap_lab.profiles import integrate_profile
from wavemap_lab.wave import (EQUALITY_TOL, RadialGrid, WaveState, build_self_similar,
                              compact_bump, energy, energy_ledger, evolve,
                              evolve_linearized, flux, integrability_exponent,
                              nonuniqueness_exhibit, observed_order, self_similar_exact,
                              stability_probe, verify_energy_equality)

S = SphereMetric()
C3 = EquivarianceClass(3)
C7 = EquivarianceClass(7)


@pytest.fixture(scope="module")
def shatah():
    return integrate_profile(S, C3, 2.0)


def bump_state(dr, height=0.5, r_max=4.0, cls=C3):
    grid = RadialGrid.with_spacing(r_max, dr)
    r = grid.r
    return WaveState(0.0, grid, height * compact_bump(r, 1.0, 0.5), np.zeros(r.size),
                     cls, S, center=0.0)


# --- trivial solutions ---------------------------------------------------------------

def test_equator_is_static():
    grid = RadialGrid.with_spacing(3.0, 0.01)
    tr = evolve(WaveState.equator(grid, S, C3), n_steps=200)
    assert np.all(tr.phi == S.phi_star) and np.all(tr.phi_t == 0.0)


def test_zero_stays_zero():
    grid = RadialGrid.with_spacing(3.0, 0.01)
    tr = evolve(WaveState.zero(grid, S, C3), n_steps=200)
    assert np.all(tr.phi == 0.0)
    assert energy(tr.final, 1.0) == 0.0
    assert flux(tr, 1.0, 2.0) == 0.0
    w = evolve_linearized(WaveState.zero(grid, S, C3), n_steps=50)
    assert np.all(w.phi == 0.0)


def test_equator_energy():
    grid = RadialGrid.with_spacing(3.0, 0.01)
    st = WaveState.equator(grid, S, C3)
    assert energy(st, 1.0) == pytest.approx(FROZEN["ee_equator_d3"], abs=1e-12)


def test_equator_window_residual_vanishes():
    grid = RadialGrid.with_spacing(3.0, 0.01)
    tr = evolve(WaveState.equator(grid, S, C3), t_end=0.5)
    rep = verify_energy_equality(tr, 0.5, 1.0)
    assert abs(rep.residual) < 1e-13 and rep.max_residual < 1e-13


# --- errors -------------------------------------------------------------------------------

def test_cfl_violation():
    st = bump_state(0.01)
    with pytest.raises(CFLViolation):
        evolve(st, dt=0.0095, n_steps=3)
    with pytest.raises(CFLViolation):
        evolve(st, dt=0.0095, n_steps=3, cfl=1.0)   # beyond the spectral bound


def test_nan_detected_reports_node():
    st = bump_state(0.01)
    st.phi[150] = np.nan
    with pytest.raises(NaNDetected) as info:
        evolve(st, n_steps=5)
    assert info.value.node in (149, 150, 151)
    assert info.value.time > 0.0


def test_cone_out_of_domain():
    tr = evolve(bump_state(0.02, r_max=2.0), t_end=0.5)
    with pytest.raises(ConeOutOfDomain):
        flux(tr, 0.5, 2.5)
    with pytest.raises(ValueError):
        flux(tr, 0.5, 0.5)


def test_profile_not_matching():
    besov = integrate_profile(S, C3, 1.0)
    grid = RadialGrid.with_spacing(3.0, 0.01)
    with pytest.raises(ProfileNotMatching):
        build_self_similar(besov, 0.0, grid, 1.0)


# --- energy and flux --------------------------------------------------------------------

def test_smooth_bump_equality_second_order():
    res, hs = [], []
    for dr in (0.02, 0.01, 0.005):
        tr = evolve(bump_state(dr), t_end=1.0)
        rep = verify_energy_equality(tr, 1.0, 2.0)
        res.append(rep.max_residual)
        hs.append(tr.grid.dr)
    assert res[0] > res[1] > res[2]
    assert observed_order(hs, res) >= 1.8


def test_flux_nonnegative_and_inequality_monitor(shatah):
    runs = [evolve(bump_state(0.01, height=1.0), t_end=1.0)]
    grid = RadialGrid.with_spacing(3.0, 0.01)
    runs.append(evolve(build_self_similar(shatah, 0.0, grid, 0.25), t_end=0.75))
    for tr, (T, R) in zip(runs, ((1.0, 2.0), (0.5, 1.0))):
        led = energy_ledger(tr, T, R)
        assert led.min_flux_increment >= -1e-12
        assert led.max_inequality_violation <= EQUALITY_TOL


def test_inequality_violation_shrinks(shatah):
    viol = []
    for dr in (0.01, 0.005, 0.0025):
        grid = RadialGrid.with_spacing(3.0, dr)
        tr = evolve(build_self_similar(shatah, 0.0, grid, 0.25), t_end=0.75)
        viol.append(max(energy_ledger(tr, 0.5, 1.0).max_inequality_violation, 0.0))
    assert viol[0] > viol[1] > viol[2]


def test_finite_speed_of_propagation():
    st = bump_state(0.01)
    tr = evolve(st, n_steps=100)
    r = tr.grid.r
    # exactly unchanged beyond the stencil reach, tiny beyond the light cone
    reach = 1.5 + 100 * tr.grid.dr
    assert np.all(tr.final.phi[r > reach + 1e-9] == 0.0)
    cone = 1.5 + tr.t[-1] + 5 * tr.grid.dr
    assert np.max(np.abs(tr.final.phi[r > cone])) < 1e-5


# --- self-similar solutions ----------------------------------------------------------------

def test_self_similar_closed_form(shatah):
    grid = RadialGrid.with_spacing(3.0, 0.01)
    st = build_self_similar(shatah, 0.0, grid, 1.0)
    r = grid.r
    inside = r <= 1.0
    assert np.max(np.abs(st.phi[inside] - 2 * np.arctan(r[inside]))) < 1e-8
    assert np.all(st.phi[~inside] == math.pi / 2)
    assert np.all(st.phi_t[~inside] == 0.0)
    assert st.phi[100] == pytest.approx(math.pi / 2, abs=1e-8)


def test_self_similar_limit_is_equator_data(shatah):
    grid = RadialGrid.with_spacing(3.0, 0.01)
    r = grid.r
    for eps in (1e-2, 1e-3):
        st = build_self_similar(shatah, 0.0, grid, eps)
        away = r >= 0.05
        assert np.max(np.abs(st.phi[away] - S.phi_star)) == 0.0
        assert np.max(np.abs(st.phi_t[away])) == 0.0


def _tracking_errors(profile, levels):
    out = []
    for dr in levels:
        grid = RadialGrid.with_spacing(3.0, dr)
        tr = evolve(build_self_similar(profile, 0.5, grid, 0.6), t_end=1.0,
                    checkpoint_every=10**9)
        r = grid.r
        err = np.abs(tr.final.phi - self_similar_exact(profile, 0.5, r, 1.0, S))[r <= 0.5]
        out.append((np.max(err), float(np.sqrt(np.mean(err**2)))))
    return out


def test_delayed_blowup_tracking_converges(shatah):
    levels = (0.01, 0.005, 0.0025)
    errs = _tracking_errors(shatah, levels)
    rms = [e[1] for e in errs]
    assert rms[0] > rms[1] > rms[2]
    assert observed_order(levels, rms) >= 0.9


@pytest.mark.xfail(strict=True, reason="the gradient kink at the cone limits the "
                   "scheme to first order; see the decisions ledger")
def test_delayed_blowup_tracking_second_order(shatah):
    levels = (0.005, 0.0025, 0.00125)
    sup = [e[0] for e in _tracking_errors(shatah, levels)]
    assert observed_order(levels, sup) >= 1.8


def test_integrability_exponent_d3(shatah):
    got, expected = integrability_exponent(shatah, S, C3)
    assert expected == -0.5
    assert got == pytest.approx(expected, abs=0.1)


def test_nonuniqueness_exhibit_coarse(shatah):
    ex = nonuniqueness_exhibit(S, C3, dr=0.01, profile=shatah)
    assert ex["identical_data_off_centre"]
    assert ex["sup_difference_in_cone"] >= 1.0
    assert ex["both_within_tolerance"] and ex["tolerance"] == EQUALITY_TOL
    assert ex["distance_to_glued_profile"] < 0.05


# --- linear stability probe -------------------------------------------------------------------

def test_probe_d7_bounded():
    res = stability_probe(S, C7)
    assert res.q_star == pytest.approx(-6.0)
    assert res.energy_positive
    assert res.energy_growth < 2.0
    assert res.verdict() == "Bounded"


def test_probe_d3_unstable():
    res = stability_probe(S, C3)
    assert res.q_star == pytest.approx(-2.0)
    assert res.growth_factor > 10.0 and res.monotone
    assert res.verdict() == "Unstable"
    d = res.to_dict()
    assert d["verdict"] == "Unstable" and d["t_end"] == pytest.approx(20.0)


# --- exports -------------------------------------------------------------------------------------

def test_ledger_jsonl_and_trajectory_csv(tmp_path):
    tr = evolve(bump_state(0.05, r_max=3.0), t_end=0.5)
    led = energy_ledger(tr, 0.5, 1.5)
    led.write_jsonl(tmp_path / "l.jsonl")
    rows = [json.loads(x) for x in (tmp_path / "l.jsonl").read_text(encoding="utf-8").splitlines()]
    assert len(rows) == tr.t.size
    assert set(rows[0]) == {"t", "radius", "energy", "flux", "residual", "R", "t0"}
    assert rows[0]["flux"] == 0.0 and rows[-1]["radius"] == pytest.approx(1.0)
    tr.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,r,phi,phi_t"
    assert len(lines) == 1 + tr.t.size * tr.grid.r.size
    t, r, phi, phi_t = map(float, lines[1].split(","))
    assert (t, r) == (0.0, 0.0)
