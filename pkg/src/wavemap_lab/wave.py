"""Radial evolution of the equivariant wave-map equation.

    phi_tt - phi_rr - (d-1)/r phi_r + (k/r^2) g(phi) g'(phi) = 0

The scheme is a finite-volume leapfrog (Stormer-Verlet) on the uniform
nodes ``r_j = j dr``.  Node ``j`` owns the shell between ``r_{j-1/2}`` and
``r_{j+1/2}``; the radial Laplacian is the flux difference across the two
faces and the ``1/r^2`` potential is the shell average of ``r^(d-3)``.  The
centre node carries the declared centre value (0 or ``phi*``), which is how
``phi - centre ~ r^ell`` enters; the outer node uses a first-order outgoing
condition for ``r^((d-1)/2) (phi - phi_far)``.

Energies and fluxes are evaluated by quadrature of the continuous
integrands on the P1 interpolant of the nodal data, independently of the
discrete energy the scheme conserves.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (CFLViolation, ConeOutOfDomain, NaNDetected,
                     ProfileNotMatching)
from .geometry import EquivarianceClass, TargetMetric, metric_derivatives_at_equator

CFL_DEFAULT = 0.9
STABILITY_SAFETY = 0.95
MATCH_TOL = 1e-6
EQUALITY_TOL = 1e-2     # acceptance level for |E(T,R-T) + flux - E(0,R)|
_N_GAUSS = 4


# --- grid and operator --------------------------------------------------------

@dataclass(frozen=True)
class RadialGrid:
    """Uniform nodes on ``[0, r_max]``."""

    dr: float
    r_max: float

    @classmethod
    def with_spacing(cls, r_max, dr):
        n = int(round(r_max / dr))
        return cls(dr=r_max / n, r_max=float(r_max))

    @property
    def n(self):
        return int(round(self.r_max / self.dr))

    @property
    def r(self):
        return np.arange(self.n + 1) * self.dr


class _Operator:
    """Shell volumes, face weights and potential weights for one grid."""

    def __init__(self, grid: RadialGrid, d: int):
        r = grid.r
        dr = grid.dr
        faces = np.concatenate([[0.0], r[:-1] + 0.5 * dr, [r[-1]]])
        lo, hi = faces[:-1], faces[1:]
        self.vol = (hi**d - lo**d) / d
        self.face = (r[:-1] + 0.5 * dr) ** (d - 1) / dr
        self.pot = (hi ** (d - 2) - lo ** (d - 2)) / (d - 2)
        self.r = r
        self.d = d

    def laplacian(self, phi):
        flux = self.face * np.diff(phi)
        out = np.zeros_like(phi)
        out[:-1] += flux
        out[1:] -= flux
        return out

    def spectral_bound(self, k, curvature):
        """Gershgorin bound on the linearised spatial operator (interior
        nodes), with ``curvature`` bounding ``|(g g')'|``."""
        diag = np.zeros_like(self.vol)
        diag[:-1] += self.face
        diag[1:] += self.face
        rows = (2.0 * diag + k * curvature * self.pot)[1:-1] / self.vol[1:-1]
        return float(rows.max())


def _curvature_bound(metric: TargetMetric):
    phi = np.linspace(-2.0 * metric.phi_star, 2.0 * metric.phi_star, 801)
    return float(np.max(np.abs(metric.gdg_prime(phi))))


def stable_dt(grid: RadialGrid, metric: TargetMetric, cls: EquivarianceClass,
              cfl=CFL_DEFAULT, linear_q=None):
    """Largest admissible step: ``min(cfl dr, 2 / sqrt(lambda_max))``.

    The light-cone condition alone is not enough near the origin, where the
    ``k/r^2`` potential raises the top of the spectrum above ``4/dr^2``.
    """
    op = _Operator(grid, cls.d)
    if linear_q is None:
        lam = op.spectral_bound(cls.k, _curvature_bound(metric))
    else:
        lam = op.spectral_bound(1.0, abs(linear_q))
    return min(cfl * grid.dr, STABILITY_SAFETY * 2.0 / np.sqrt(lam))


# --- states and trajectories --------------------------------------------------

@dataclass
class WaveState:
    t: float
    grid: RadialGrid
    phi: np.ndarray
    phi_t: np.ndarray
    cls: EquivarianceClass
    metric: TargetMetric
    center: float = 0.0
    far_value: float | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.phi_t = np.asarray(self.phi_t, dtype=float)
        if self.phi.shape != (self.grid.n + 1,) or self.phi_t.shape != self.phi.shape:
            raise ValueError("phi and phi_t must live on the grid nodes")
        if self.far_value is None:
            self.far_value = float(self.phi[-1])

    @property
    def r(self):
        return self.grid.r

    def copy(self):
        return WaveState(self.t, self.grid, self.phi.copy(), self.phi_t.copy(),
                         self.cls, self.metric, self.center, self.far_value)

    @classmethod
    def equator(cls_, grid, metric, cls, t=0.0):
        n = grid.n + 1
        return cls_(t, grid, np.full(n, metric.phi_star), np.zeros(n), cls, metric,
                    center=metric.phi_star)

    @classmethod
    def zero(cls_, grid, metric, cls, t=0.0):
        n = grid.n + 1
        return cls_(t, grid, np.zeros(n), np.zeros(n), cls, metric, center=0.0)


@dataclass
class Trajectory:
    """Checkpointed states of one run (shared grid, class and metric)."""

    grid: RadialGrid
    cls: EquivarianceClass
    metric: TargetMetric
    t: np.ndarray
    phi: np.ndarray
    phi_t: np.ndarray
    center: float = 0.0
    dt: float = 0.0
    linear_q: float | None = None
    log_scale: np.ndarray | None = None

    def state(self, i) -> WaveState:
        return WaveState(float(self.t[i]), self.grid, self.phi[i], self.phi_t[i],
                         self.cls, self.metric, self.center)

    @property
    def final(self) -> WaveState:
        return self.state(-1)

    def index_of(self, t, tol=None):
        tol = 0.5 * self.dt if tol is None else tol
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > tol:
            raise ValueError(f"no checkpoint at t = {t}")
        return i

    def write_csv(self, path):
        """Long format: one row per (checkpoint, node)."""
        r = self.grid.r
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "r", "phi", "phi_t"])
            for i, t in enumerate(self.t):
                for j in range(r.size):
                    w.writerow([repr(float(t)), repr(float(r[j])),
                                repr(float(self.phi[i, j])), repr(float(self.phi_t[i, j]))])


# --- time stepping ------------------------------------------------------------

def _evolve(state: WaveState, dt, n_steps, checkpoint_every, cfl, linear_q,
            renormalize=None):
    grid = state.grid
    metric, cls = state.metric, state.cls
    if dt > cfl * grid.dr * (1.0 + 1e-12):
        raise CFLViolation(f"dt = {dt:.4g} exceeds {cfl} dr = {cfl * grid.dr:.4g}")
    bound = stable_dt(grid, metric, cls, cfl, linear_q)
    if dt > bound * (1.0 + 1e-12):
        raise CFLViolation(f"dt = {dt:.4g} exceeds the stability bound {bound:.4g}")
    op = _Operator(grid, cls.d)
    r = grid.r
    k = cls.k
    inv_vol = 1.0 / op.vol
    far = state.far_value
    half = 0.5 * (cls.d - 1)
    c_out = r[-1] ** half
    c_in = r[-2] ** half

    if linear_q is None:
        def accel(phi):
            a = (op.laplacian(phi) - k * op.pot * metric.gdg(phi)) * inv_vol
            a[0] = 0.0
            return a
    else:
        def accel(phi):
            a = (op.laplacian(phi) - linear_q * op.pot * phi) * inv_vol
            a[0] = 0.0
            return a

    phi = state.phi.copy()
    phi[0] = state.center
    a = accel(phi)
    v = state.phi_t.copy()
    v[0] = 0.0
    v_half = v + 0.5 * dt * a
    ts, phis, vels, scales = [state.t], [phi.copy()], [v.copy()], [0.0]
    log_scale = 0.0
    t0 = state.t
    lam = dt / grid.dr
    for n in range(1, n_steps + 1):
        new = phi + dt * v_half
        # outgoing condition on u = r^((d-1)/2) (phi - far)
        u_n = c_out * (phi[-1] - far)
        u_m = c_in * (phi[-2] - far)
        new[-1] = far + (u_n - lam * (u_n - u_m)) / c_out
        new[0] = state.center
        v_out = (new[-1] - phi[-1]) / dt
        phi = new
        a = accel(phi)
        v_node = v_half + 0.5 * dt * a
        v_node[-1] = v_out
        v_half = v_half + dt * a
        v_half[-1] = v_out
        bad = ~np.isfinite(phi)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise NaNDetected(f"non-finite value at node {j} (r = {r[j]:.4g}), "
                              f"t = {t0 + n * dt:.6g}", node=j, time=t0 + n * dt)
        if renormalize is not None:
            size = float(np.max(np.abs(phi)))
            if size > renormalize:
                phi /= size
                v_half /= size
                v_node /= size
                log_scale += np.log(size)
        if n % checkpoint_every == 0 or n == n_steps:
            ts.append(t0 + n * dt)
            phis.append(phi.copy())
            vels.append(v_node.copy())
            scales.append(log_scale)
    return Trajectory(grid, cls, metric, np.array(ts), np.array(phis), np.array(vels),
                      state.center, dt, linear_q,
                      np.array(scales) if renormalize is not None else None)


def evolve(state: WaveState, dt=None, n_steps=None, t_end=None, checkpoint_every=1,
           cfl=CFL_DEFAULT) -> Trajectory:
    """Leapfrog evolution of the nonlinear equation.

    Give either ``n_steps`` or ``t_end``.  With ``dt=None`` the largest
    stable step is used (shrunk so that ``t_end`` is hit exactly).

    Raises
    ------
    CFLViolation
        ``dt > cfl * dr`` or above the spectral stability bound.
    NaNDetected
        With the first offending node and time.
    """
    dt, n_steps = _step_plan(state, dt, n_steps, t_end, cfl, None)
    return _evolve(state, dt, n_steps, checkpoint_every, cfl, None)


def evolve_linearized(state_w: WaveState, dt=None, n_steps=None, t_end=None,
                      checkpoint_every=1, cfl=CFL_DEFAULT, renormalize=1e100):
    """Leapfrog evolution of ``w_tt - w_rr - (d-1)/r w_r + q w / r^2 = 0``
    with ``q = k g(phi*) g''(phi*)``.

    The equation is linear, so when ``max |w|`` exceeds ``renormalize`` the
    state is rescaled and the logarithm of the factor is accumulated in
    ``Trajectory.log_scale``; this keeps exponentially growing runs finite.
    """
    g0, _, g2 = metric_derivatives_at_equator(state_w.metric)
    q = state_w.cls.k * g0 * g2
    dt, n_steps = _step_plan(state_w, dt, n_steps, t_end, cfl, q)
    w = state_w.copy()
    w.center = 0.0
    w.far_value = 0.0
    return _evolve(w, dt, n_steps, checkpoint_every, cfl, q, renormalize)


def _step_plan(state, dt, n_steps, t_end, cfl, linear_q):
    if (n_steps is None) == (t_end is None):
        raise ValueError("give exactly one of n_steps and t_end")
    if dt is None:
        dt = stable_dt(state.grid, state.metric, state.cls, cfl, linear_q)
        if t_end is not None:
            n_steps = max(int(np.ceil((t_end - state.t) / dt - 1e-9)), 1)
            dt = (t_end - state.t) / n_steps
    elif t_end is not None:
        n_steps = max(int(np.ceil((t_end - state.t) / dt - 1e-9)), 1)
        dt = (t_end - state.t) / n_steps
    return dt, int(n_steps)


# --- energy and flux ----------------------------------------------------------

def _cells_up_to(r, R):
    """Cell endpoints covering ``[0, R]``, the last one possibly partial."""
    j = int(np.searchsorted(r, R, side="left"))
    a = r[:j]
    b = np.append(r[1:j], R)
    if b.size and b[-1] <= a[-1]:
        a, b = a[:-1], b[:-1]
    return a, b


def _p1(values, r, s):
    return np.interp(s, r, values)


def energy_density_integral(r, phi, phi_t, metric, cls, R):
    """``int_0^R (phi_r^2 + k g(phi)^2 / r^2 + phi_t^2) r^(d-1) dr`` for the
    P1 interpolant of nodal data."""
    d, k = cls.d, cls.k
    a, b = _cells_up_to(r, R)
    if a.size == 0:
        return 0.0
    j = np.arange(a.size)
    slope = (phi[j + 1] - phi[j]) / (r[j + 1] - r[j])
    grad = np.sum(slope**2 * (b**d - a**d) / d)
    xg, wg = np.polynomial.legendre.leggauss(_N_GAUSS)
    lam = 0.5 * (xg + 1.0)
    s = a[:, None] + (b - a)[:, None] * lam
    w = 0.5 * (b - a)[:, None] * wg
    p = _p1(phi, r, s)
    pt = _p1(phi_t, r, s)
    body = np.sum(w * (k * metric.g(p) ** 2 * s ** (d - 3) + pt**2 * s ** (d - 1)))
    return float(grad + body)


def energy(state: WaveState, R) -> float:
    """``E(t, R, phi)`` of one state.

    Raises
    ------
    ConeOutOfDomain
        If ``R`` exceeds the grid.
    """
    if R > state.grid.r_max * (1.0 + 1e-12):
        raise ConeOutOfDomain(f"R = {R} exceeds r_max = {state.grid.r_max}")
    return energy_density_integral(state.r, state.phi, state.phi_t, state.metric,
                                   state.cls, R)


def _fields_at(traj: Trajectory, i, rho):
    """``(phi, phi_t, phi_r)`` at radii ``rho`` on checkpoint ``i`` (P1 in r)."""
    r = traj.grid.r
    phi = traj.phi[i]
    # cell slopes sit at cell midpoints and are interpolated linearly
    # between them: second order where phi is smooth, and a kink spreads
    # over about one cell
    mid = 0.5 * (r[1:] + r[:-1])
    slope = np.diff(phi) / np.diff(r)
    return _p1(phi, r, rho), _p1(traj.phi_t[i], r, rho), np.interp(rho, mid, slope)


def _flux_density(traj, p, pt, pr, rho):
    d, k = traj.cls.d, traj.cls.k
    return (pt - pr) ** 2 * rho ** (d - 1) + k * traj.metric.g(p) ** 2 * rho ** (d - 3)


def flux_integrand(traj: Trajectory, i, rho):
    """``((phi_t - phi_r)^2 + k g(phi)^2 / r^2) r^(d-1)`` at ``(rho, t_i)``."""
    return _flux_density(traj, *_fields_at(traj, i, rho), rho)


def _flux_steps(traj, i0, i1, R, n_sub=8):
    """Flux accumulated over each step ``[t_i, t_{i+1}]``.

    The fields are interpolated linearly in r on both checkpoints and
    linearly in t between them, then integrated along ``r = R - (s - t0)``
    with ``n_sub`` Gauss points per step.
    """
    xg, wg = np.polynomial.legendre.leggauss(n_sub)
    lam = 0.5 * (xg + 1.0)
    s0 = traj.t[i0]
    out = np.zeros(i1 - i0)
    for m, i in enumerate(range(i0, i1)):
        ta, tb = traj.t[i], traj.t[i + 1]
        s = ta + (tb - ta) * lam
        rho = R - (s - s0)
        fa = _fields_at(traj, i, rho)
        fb = _fields_at(traj, i + 1, rho)
        p, pt, pr = ((1.0 - lam) * a + lam * b for a, b in zip(fa, fb))
        out[m] = 0.5 * (tb - ta) * np.sum(wg * _flux_density(traj, p, pt, pr, rho))
    return out


def flux(traj: Trajectory, T, R, t0=None) -> float:
    """Energy flux through the ingoing characteristic ``r = R - (s - t0)``,
    ``s`` in ``[t0, t0 + T]``.

    Normalised to match ``E`` without the factor 1/2:
    ``int ((phi_t - phi_r)^2 + k g^2 / r^2) r^(d-1) ds``.  The checkpoints
    must include every step inside the window.
    """
    i0, i1 = _window(traj, T, R, t0)
    return float(np.sum(_flux_steps(traj, i0, i1, R)))


def _window(traj, T, R, t0):
    if R - T <= 0:
        raise ValueError("flux needs R > T")
    if R > traj.grid.r_max * (1.0 + 1e-12):
        raise ConeOutOfDomain(f"R = {R} exceeds r_max = {traj.grid.r_max}")
    t0 = traj.t[0] if t0 is None else t0
    i0 = traj.index_of(t0)
    i1 = traj.index_of(traj.t[i0] + T)
    steps = np.diff(traj.t[i0:i1 + 1])
    if steps.size and np.max(steps) > 1.5 * traj.dt:
        raise ValueError("flux window needs a checkpoint at every step")
    return i0, i1


# --- self-similar solutions ---------------------------------------------------

def _profile_pair(profile):
    if hasattr(profile, "evaluate"):
        return lambda rho: profile.evaluate(rho)
    if hasattr(profile, "derivative"):
        return lambda rho: (np.asarray(profile(rho), float),
                            np.asarray(profile.derivative(rho), float))
    raise TypeError("profile needs evaluate() or derivative()")


def build_self_similar(profile, T, grid: RadialGrid, t, metric=None, cls=None) -> WaveState:
    """Glued self-similar state at time ``t > T``.

    ``phi = psi(r/(t-T))`` and ``phi_t = -r/(t-T)^2 psi'(r/(t-T))`` inside
    the cone ``r <= t - T``; ``(phi*, 0)`` outside.

    Raises
    ------
    ProfileNotMatching
        If ``|psi(1) - phi*| > 1e-6``.
    """
    metric = getattr(profile, "metric", None) if metric is None else metric
    cls = getattr(profile, "cls", None) if cls is None else cls
    if metric is None or cls is None:
        raise ValueError("metric and class are needed for a bare profile")
    if t <= T:
        raise ValueError("need t > T")
    pair = _profile_pair(profile)
    psi1, _ = pair(np.array([1.0]))
    psi1 = float(np.atleast_1d(psi1)[0])
    if abs(psi1 - metric.phi_star) > MATCH_TOL:
        raise ProfileNotMatching(f"psi(1) = {psi1:.10g} but phi* = {metric.phi_star:.10g}")
    tau = t - T
    r = grid.r
    phi = np.full(r.size, metric.phi_star)
    phi_t = np.zeros(r.size)
    inside = r <= tau * (1.0 + 1e-12)
    rho = np.minimum(r[inside] / tau, 1.0)
    psi, dpsi = pair(rho)
    phi[inside] = psi
    phi_t[inside] = -rho * dpsi / tau
    return WaveState(t, grid, phi, phi_t, cls, metric, center=0.0,
                     far_value=metric.phi_star)


def sample_self_similar(profile, T, grid: RadialGrid, t0, t1, dt, metric=None,
                        cls=None) -> Trajectory:
    """Trajectory of the glued self-similar solution sampled exactly at
    ``t0, t0 + dt, ..., t1`` (no time stepping)."""
    n = max(int(np.ceil((t1 - t0) / dt - 1e-9)), 1)
    ts = np.linspace(t0, t1, n + 1)
    states = [build_self_similar(profile, T, grid, t, metric, cls) for t in ts]
    st = states[0]
    return Trajectory(grid, st.cls, st.metric, ts, np.array([s.phi for s in states]),
                      np.array([s.phi_t for s in states]), 0.0, (t1 - t0) / n)


def self_similar_exact(profile, T, r, t, metric):
    """Glued self-similar field ``phi(r, t)`` for comparison with runs."""
    pair = _profile_pair(profile)
    tau = t - T
    out = np.full(np.shape(r), metric.phi_star, dtype=float)
    inside = r <= tau
    out[inside] = pair(r[inside] / tau)[0]
    return out


# --- energy equality ----------------------------------------------------------

@dataclass
class LedgerRecord:
    t: float
    radius: float
    energy: float
    flux: float
    residual: float


@dataclass
class EnergyLedger:
    """Per-checkpoint records of ``E(t, R - (t - t0))``, the flux up to
    ``t`` and the equality residual ``E + flux - E(t0, R)``."""

    R: float
    t0: float
    energy0: float
    records: list = field(default_factory=list)

    @property
    def max_residual(self):
        return max((abs(rec.residual) for rec in self.records), default=0.0)

    @property
    def max_inequality_violation(self):
        """Largest positive residual (the weak law only bounds it above)."""
        return max((rec.residual for rec in self.records), default=0.0)

    @property
    def min_flux_increment(self):
        f = [0.0] + [rec.flux for rec in self.records]
        return float(np.min(np.diff(f))) if len(f) > 1 else 0.0

    def to_jsonl(self):
        return "".join(json.dumps({"t": rec.t, "radius": rec.radius, "energy": rec.energy,
                                   "flux": rec.flux, "residual": rec.residual,
                                   "R": self.R, "t0": self.t0}) + "\n"
                       for rec in self.records)

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def energy_ledger(traj: Trajectory, T, R, t0=None, stride=1) -> EnergyLedger:
    i0, i1 = _window(traj, T, R, t0)
    r = traj.grid.r
    d, k = traj.cls.d, traj.cls.k
    s0 = traj.t[i0]
    e0 = energy_density_integral(r, traj.phi[i0], traj.phi_t[i0], traj.metric,
                                 traj.cls, R)
    ledger = EnergyLedger(R=R, t0=float(s0), energy0=e0)
    acc = np.concatenate([[0.0], np.cumsum(_flux_steps(traj, i0, i1, R))])
    for i in range(i0, i1 + 1):
        rho = R - (traj.t[i] - s0)
        if (i - i0) % stride == 0 or i == i1:
            e = energy_density_integral(r, traj.phi[i], traj.phi_t[i], traj.metric,
                                        traj.cls, rho)
            f = float(acc[i - i0])
            ledger.records.append(LedgerRecord(float(traj.t[i]), float(rho), e, f,
                                               e + f - e0))
    return ledger


def nonlinear_term_norm(state: WaveState):
    """``|| g(phi) g'(phi) / r^2 ||`` in ``L^2(r^(d-1) dr)`` over the grid."""
    r = state.r
    d = state.cls.d
    xg, wg = np.polynomial.legendre.leggauss(_N_GAUSS)
    lam = 0.5 * (xg + 1.0)
    a, b = r[:-1], r[1:]
    s = a[:, None] + (b - a)[:, None] * lam
    w = 0.5 * (b - a)[:, None] * wg
    v = state.metric.gdg(_p1(state.phi, r, s))
    return float(np.sqrt(np.sum(w * v * v * s ** (d - 5))))


@dataclass
class EqualityReport:
    residual: float
    energy_start: float
    energy_end: float
    flux: float
    ledger: EnergyLedger
    exponent: float | None = None
    exponent_expected: float | None = None

    @property
    def max_residual(self):
        return self.ledger.max_residual

    def to_dict(self):
        return {"residual": self.residual, "energy_start": self.energy_start,
                "energy_end": self.energy_end, "flux": self.flux,
                "max_ledger_residual": self.ledger.max_residual,
                "exponent": self.exponent, "exponent_expected": self.exponent_expected}


def verify_energy_equality(traj: Trajectory, T, R, t0=None, blowup_time=None,
                           fit_window=None) -> EqualityReport:
    """Residual of ``E(t0+T, R-T) + flux - E(t0, R)`` on a trajectory.

    With ``blowup_time`` set (self-similar runs), also fits the exponent of
    ``|| g g'(phi) / r^2 ||_{L^2}`` against ``t - blowup_time`` over
    ``fit_window`` (default: all checkpoints); the scaling prediction is
    ``(d - 4) / 2``.
    """
    ledger = energy_ledger(traj, T, R, t0)
    last = ledger.records[-1]
    rep = EqualityReport(residual=last.residual, energy_start=ledger.energy0,
                         energy_end=last.energy, flux=last.flux, ledger=ledger)
    if blowup_time is not None:
        lo, hi = (traj.t[0], traj.t[-1]) if fit_window is None else fit_window
        sel = np.flatnonzero((traj.t >= lo - 1e-12) & (traj.t <= hi + 1e-12))
        sel = sel[np.linspace(0, sel.size - 1, min(sel.size, 40)).astype(int)]
        tau = traj.t[sel] - blowup_time
        norms = np.array([nonlinear_term_norm(traj.state(i)) for i in sel])
        rep.exponent = float(np.polyfit(np.log(tau), np.log(norms), 1)[0])
        rep.exponent_expected = (traj.cls.d - 4) / 2.0
    return rep


# --- linear stability probe ---------------------------------------------------

def compact_bump(r, center=1.0, width=0.5, height=1.0):
    """Smooth bump ``height * exp(1 - 1/(1 - z^2))``, ``z = (r - center)/width``."""
    z = (np.asarray(r, float) - center) / width
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = height * np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
    return out


def linear_energies(traj: Trajectory, i):
    """Discrete ``(log|H|, log N)`` of a linearised checkpoint.

    ``H = int (w_t^2 + w_r^2 + q w^2 / r^2) r^(d-1)`` is the conserved
    energy of the linearised equation; it is a norm exactly when the
    Hardy-type criterion holds.  ``N`` is the same with ``|q|`` and always
    positive.  Both use the scheme's shell and face weights and include
    the accumulated rescaling.
    """
    op = _Operator(traj.grid, traj.cls.d)
    w = traj.phi[i]
    v = traj.phi_t[i]
    kg = np.sum(op.vol * v * v) + np.sum(op.face * np.diff(w) ** 2)
    pot = np.sum(op.pot * w * w)
    q = traj.linear_q
    scale = 0.0 if traj.log_scale is None else 2.0 * traj.log_scale[i]
    with np.errstate(divide="ignore"):
        return (float(np.log(abs(kg + q * pot)) + scale),
                float(np.log(kg + abs(q) * pot) + scale))


def _ratio(log_a, log_b):
    with np.errstate(over="ignore"):
        return float(np.exp(log_a - log_b))


@dataclass
class ProbeResult:
    times: np.ndarray
    log_energy: np.ndarray
    log_norm: np.ndarray
    q_star: float
    threshold: float
    energy_positive: bool

    @property
    def energy_growth(self):
        """``max_t |H(t)| / H(0)``."""
        return _ratio(np.max(self.log_energy), self.log_energy[0])

    @property
    def growth_factor(self):
        """``N(t_end) / N(0)``."""
        return _ratio(self.log_norm[-1], self.log_norm[0])

    @property
    def log10_growth(self):
        return float((self.log_norm[-1] - self.log_norm[0]) / np.log(10.0))

    @property
    def monotone(self):
        """``N`` non-decreasing on the unit-time samples after t = 0."""
        t = self.times
        marks = np.arange(1.0, np.floor(t[-1] + 1e-9) + 1.0)
        idx = np.unique([int(np.argmin(np.abs(t - m))) for m in marks])
        return bool(np.all(np.diff(self.log_norm[idx]) >= 0.0))

    def verdict(self, unstable_factor=10.0, bounded_factor=2.0):
        if self.growth_factor > unstable_factor and self.monotone:
            return "Unstable"
        if self.energy_positive and self.energy_growth < bounded_factor:
            return "Bounded"
        return "Inconclusive"

    def to_dict(self):
        def finite(x):
            return x if np.isfinite(x) else None

        return {"q_star": self.q_star, "threshold": self.threshold,
                "energy_growth": finite(self.energy_growth),
                "energy_positive": self.energy_positive,
                "growth_factor": finite(self.growth_factor), "log10_growth": self.log10_growth,
                "monotone": self.monotone, "verdict": self.verdict(),
                "t_end": float(self.times[-1])}


def stability_probe(metric, cls, t_end=20.0, dr=0.02, bump_center=1.0,
                    bump_width=0.5, samples_per_unit=10) -> ProbeResult:
    """Evolve a compact bump under the linearised equation about the
    equator and track its linearised energy ``H`` and norm ``N``."""
    r_max = bump_center + bump_width + t_end + 2.0
    grid = RadialGrid.with_spacing(r_max, dr)
    r = grid.r
    w0 = WaveState(0.0, grid, compact_bump(r, bump_center, bump_width), np.zeros(r.size),
                   cls, metric, center=0.0, far_value=0.0)
    q = _q(metric, cls)
    dt = stable_dt(grid, metric, cls, linear_q=q)
    per_unit = int(np.ceil(1.0 / dt / samples_per_unit)) * samples_per_unit
    dt = 1.0 / per_unit
    n_steps = int(round(t_end * per_unit))
    traj = evolve_linearized(w0, dt=dt, n_steps=n_steps,
                             checkpoint_every=per_unit // samples_per_unit)
    logs = np.array([linear_energies(traj, i) for i in range(traj.t.size)])
    op = _Operator(grid, cls.d)
    w = traj.phi[0]
    h0 = np.sum(op.face * np.diff(w) ** 2) + q * np.sum(op.pot * w * w)
    return ProbeResult(traj.t, logs[:, 0], logs[:, 1], q, -((cls.d - 2) ** 2) / 4.0,
                       bool(h0 > 0.0))


def _q(metric, cls):
    g0, _, g2 = metric_derivatives_at_equator(metric)
    return cls.k * g0 * g2


# --- studies ------------------------------------------------------------------

def observed_order(spacings, errors):
    """Least-squares slope of ``log |error|`` against ``log spacing``."""
    x = np.log(np.asarray(spacings, float))
    y = np.log(np.abs(np.asarray(errors, float)))
    return float(np.polyfit(x, y, 1)[0])


def refinement_study(profile, metric, cls, levels=(0.02, 0.01, 0.005), T=0.0,
                     window=(0.25, 0.75), R=1.0, r_max=3.0):
    """Energy-equality residual of evolved glued self-similar runs on a
    sequence of grids.

    Each run starts from :func:`build_self_similar` at ``window[0]`` and is
    evolved to ``window[1]``.  The residual of a level is the largest
    ``|E(t, R - (t - t0)) + flux - E(t0, R)|`` over the ledger.
    """
    rows = []
    for dr in levels:
        grid = RadialGrid.with_spacing(r_max, dr)
        st = build_self_similar(profile, T, grid, window[0], metric, cls)
        traj = evolve(st, t_end=window[1])
        rep = verify_energy_equality(traj, window[1] - window[0], R)
        rows.append({"dr": grid.dr, "dt": traj.dt, "max_residual": rep.max_residual,
                     "final_residual": rep.residual})
    order = observed_order([r["dr"] for r in rows], [r["max_residual"] for r in rows])
    return {"levels": rows, "order": order}


def integrability_exponent(profile, metric, cls, dr=0.005, T=0.0, t_fit=(0.2, 1.0),
                           r_max=3.0):
    """Fitted exponent of ``|| g g'(phi) / r^2 ||_{L^2(r^(d-1) dr)}`` against
    ``t - T`` on an evolved glued run; the scaling value is ``(d-4)/2``."""
    grid = RadialGrid.with_spacing(r_max, dr)
    st = build_self_similar(profile, T, grid, t_fit[0], metric, cls)
    traj = evolve(st, t_end=t_fit[1])
    rep = verify_energy_equality(traj, min(t_fit[1] - t_fit[0], 0.5 * r_max), r_max / 2.0,
                                 blowup_time=T, fit_window=t_fit)
    return rep.exponent, rep.exponent_expected


def nonuniqueness_exhibit(metric, cls, dr=0.005, t_end=1.0, R=2.0, profile=None):
    """Two runs from the same nodal data ``(phi*, 0)``.

    The runs differ only in the declared centre value: ``phi*`` (the
    equator solution) or 0 (the regular centre of a self-similar solution
    glued to the equator).  Reports their sup distance inside the cone
    ``r <= t_end``, both energy ledgers on ``[0, t_end]`` with radius ``R``
    and, when ``profile`` is given, the distance of the second run to the
    glued solution built from it.
    """
    grid = RadialGrid.with_spacing(R + t_end + 1.0, dr)
    r = grid.r
    n = r.size
    eq = WaveState(0.0, grid, np.full(n, metric.phi_star), np.zeros(n), cls, metric,
                   center=metric.phi_star)
    reg = WaveState(0.0, grid, np.full(n, metric.phi_star), np.zeros(n), cls, metric,
                    center=0.0)
    same_data = bool(np.array_equal(eq.phi[1:], reg.phi[1:])
                     and np.array_equal(eq.phi_t, reg.phi_t))
    run_eq = evolve(eq, t_end=t_end)
    run_ss = evolve(reg, t_end=t_end)
    cone = r <= t_end * (1.0 + 1e-12)
    diff = float(np.max(np.abs(run_eq.final.phi - run_ss.final.phi)[cone]))
    led_eq = verify_energy_equality(run_eq, t_end, R)
    led_ss = verify_energy_equality(run_ss, t_end, R)
    out = {"dr": grid.dr, "t_end": t_end, "R": R, "identical_data_off_centre": same_data,
           "sup_difference_in_cone": diff,
           "equator_max_residual": led_eq.max_residual,
           "self_similar_max_residual": led_ss.max_residual,
           "tolerance": EQUALITY_TOL,
           "both_within_tolerance": bool(max(led_eq.max_residual, led_ss.max_residual)
                                         <= EQUALITY_TOL),
           "energy": {"equator": led_eq.to_dict(), "self_similar": led_ss.to_dict()}}
    if profile is not None:
        exact = self_similar_exact(profile, 0.0, r, t_end, metric)
        band = (r >= 0.1 * t_end) & (r <= 0.9 * t_end)
        err = np.abs(run_ss.final.phi - exact)
        out["distance_to_glued_profile"] = float(np.max(err[band]))
        out["mean_distance_to_glued_profile"] = float(np.mean(err[cone]))
    return out
