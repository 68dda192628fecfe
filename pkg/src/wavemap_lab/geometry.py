"""Rotationally symmetric targets ``dphi^2 + g(phi)^2 dchi^2`` with an equator.

A target is described by its profile function ``g`` (odd, ``g'(0) = 1``)
together with the equator ``phi_star``, the first positive zero of ``g'``.
Three families are provided: the round sphere, ellipsoids of revolution
parametrised by arc length along a meridian, and tabulated profiles read
from a two-column CSV file.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import ellipe, ellipeinc

from .errors import BadNormalization, DerivativeUnavailable, NoEquator, NotOdd

ROOT_TOL = 1e-12


@dataclass(frozen=True)
class EquivarianceClass:
    """Base dimension ``d`` and winding index ``ell`` of the eigenmap."""

    d: int
    ell: int = 1

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.d}")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ValueError(f"winding index must be an integer >= 1, got {self.ell}")

    @property
    def k(self) -> int:
        return eigen_k(self.d, self.ell)


def eigen_k(d: int, ell: int) -> int:
    """Eigenvalue ``ell * (ell + d - 2)`` of the degree-``ell`` eigenmap."""
    if d < 3 or ell < 1:
        raise ValueError("need d >= 3 and ell >= 1")
    return int(ell) * (int(ell) + int(d) - 2)


# --- truncated power series -------------------------------------------------

def _ser_mul(a, b, n):
    return np.convolve(a, b)[:n]


def _ser_compose(f, g, n):
    """Coefficients of f(g(x)) for g(0) = 0, truncated to n terms."""
    out = np.zeros(n)
    for c in f[::-1]:
        out = _ser_mul(out, g, n)
        out[0] += c
    return out


def _ser_revert(f, n):
    """Compositional inverse of f (f(0) = 0, f'(0) != 0)."""
    x = np.zeros(n)
    x[1] = 1.0
    g = x / f[1]
    for _ in range(n):
        g = g - (_ser_compose(f, g, n) - x) / f[1]
    return g


def _sin_series(n):
    c = np.zeros(n)
    for j in range(1, n, 2):
        c[j] = (-1) ** ((j - 1) // 2) / math.factorial(j)
    return c


class TargetMetric:
    """Profile function ``g`` of a target together with its equator.

    Subclasses implement ``g``, ``dg`` and ``d2g`` on numpy arrays and set
    ``phi_star``.  ``period`` is ``4 * phi_star`` for periodic targets and
    ``None`` otherwise.
    """

    kind = "abstract"
    phi_star: float
    period: float | None = None

    def g(self, phi):
        raise NotImplementedError

    def dg(self, phi):
        raise NotImplementedError

    def d2g(self, phi):
        raise NotImplementedError

    def gdg(self, phi):
        """``g(phi) g'(phi)``, exactly zero on the equator value itself."""
        phi = np.asarray(phi, dtype=float)
        out = self.g(phi) * self.dg(phi)
        return np.where(np.abs(phi) == self.phi_star, 0.0, out)

    def gdg_prime(self, phi):
        """Derivative of ``g g'``: ``g'^2 + g g''``."""
        return self.dg(phi) ** 2 + self.g(phi) * self.d2g(phi)

    def taylor_gdg(self, n_terms=12):
        """Taylor coefficients ``c[j]`` of ``g g'`` at 0 (odd; c[1] = 1)."""
        raise NotImplementedError

    def params(self) -> dict:
        return {"kind": self.kind}

    # -- symmetry bookkeeping ------------------------------------------------

    def reduce(self, phi):
        """Representative of ``phi`` in [0, phi_star] modulo the symmetries.

        Periodic targets are symmetric under ``phi -> -phi``, translation by
        the period and reflection about the equator.  Non-periodic targets
        only carry the odd symmetry, so values beyond ``phi_star`` are
        returned unchanged.
        """
        phi = np.abs(np.asarray(phi, dtype=float))
        if self.period is None:
            return phi
        half = 2.0 * self.phi_star
        phi = np.mod(phi, self.period)
        phi = np.where(phi > half, self.period - phi, phi)
        return np.where(phi > self.phi_star, half - phi, phi)

    def distance_to_equator(self, phi):
        return np.abs(self.reduce(phi) - self.phi_star)

    def distance_to_pole(self, phi):
        """Distance to the nearest image of the pole ``phi = 0``."""
        return np.abs(self.reduce(phi))

    # -- invariant checks ----------------------------------------------------

    def check_invariants(self, n=2001, tol=1e-8):
        """Raise if the sampled profile violates the basic hypotheses."""
        x = np.linspace(0.0, self.phi_star, n)[1:]
        if np.max(np.abs(self.g(-x) + self.g(x))) > tol:
            raise NotOdd("profile function is not odd")
        if abs(float(self.dg(0.0)) - 1.0) > 1e-6:
            raise BadNormalization(f"g'(0) = {float(self.dg(0.0))} != 1")
        if np.any(self.dg(x[:-1]) <= 0):
            raise NoEquator("g' vanishes before phi_star")

    def check_equator_dominance(self, n=10_000):
        """Sample ``g(phi)^2 < g(phi_star)^2`` away from the equator images.

        Returns True when the condition holds on the grid; otherwise emits a
        warning and returns False.
        """
        span = self.period if self.period is not None else 4.0 * self.phi_star
        phi = np.linspace(0.0, span, n)
        away = self.distance_to_equator(phi) > 1e-6 * max(1.0, self.phi_star)
        if self.period is None:
            away &= np.abs(phi - self.phi_star) > 1e-6
        gs2 = float(self.g(self.phi_star)) ** 2
        bad = away & (self.g(phi) ** 2 >= gs2)
        if np.any(bad):
            warnings.warn(f"g(phi)^2 >= g(phi*)^2 at phi = {phi[bad][0]:.6g}",
                          stacklevel=2)
            return False
        return True

    def satisfies_dimension3_hypotheses(self, n=10_000, tol=1e-8):
        """Either periodic with ``g(phi* + .)`` even, or g > 0 decreasing past phi*."""
        x = np.linspace(0.0, 2.0 * self.phi_star, n)[1:]
        if self.period is not None:
            ok = np.max(np.abs(self.g(self.phi_star + x) - self.g(self.phi_star - x))) <= tol
        else:
            tail = self.phi_star + x
            ok = bool(np.all(self.g(tail) > 0) and np.all(self.dg(tail) < 0))
        return bool(ok) and self.check_equator_dominance(n)


def find_equator(dg, phi_max=10.0, n_scan=4000, tol=ROOT_TOL):
    """First positive zero of ``dg`` on (0, phi_max], by bracketed bisection."""
    grid = np.linspace(0.0, phi_max, n_scan + 1)[1:]
    vals = dg(grid)
    idx = np.flatnonzero(vals <= 0.0)
    if idx.size == 0:
        raise NoEquator(f"g' has no zero on (0, {phi_max}]")
    i = idx[0]
    if vals[i] == 0.0:
        return float(grid[i])
    lo = grid[i - 1] if i > 0 else 0.0
    hi = grid[i]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dg(np.array([mid]))[0] > 0.0:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


class SphereMetric(TargetMetric):
    kind = "sphere"

    def __init__(self):
        self.phi_star = math.pi / 2
        self.period = 2.0 * math.pi

    def g(self, phi):
        return np.sin(phi)

    def dg(self, phi):
        # sin(phi* - phi) is exactly 0 at phi = phi*, unlike cos(pi/2)
        return np.sin(self.phi_star - np.asarray(phi, dtype=float))

    def d2g(self, phi):
        return -np.sin(phi)

    def gdg(self, phi):
        return self.g(phi) * self.dg(phi)

    def taylor_gdg(self, n_terms=12):
        # sin(x) cos(x) = sin(2x) / 2
        return 0.5 * _sin_series(n_terms) * 2.0 ** np.arange(n_terms)


class EllipseMetric(TargetMetric):
    """Meridian of ``y_1^2 + ... + y_d^2 + y_{d+1}^2 / a^2 = 1``.

    With ``s`` the polar angle, arc length is
    ``phi(s) = E(s | 1 - a^2)`` (incomplete elliptic integral of the second
    kind) and ``g = sin(s)``.  ``s(phi)`` is recovered by Newton iteration,
    or from a table: ``s - pi phi / (2 phi*)`` is periodic with period
    ``2 phi*`` and is stored as a periodic cubic spline on a uniform grid.
    The table is checked against Newton at the cell midpoints when built
    and used only if it agrees to ``TABLE_TOL``.
    """

    TABLE_NODES = 16384
    TABLE_TOL = 1e-13

    kind = "ellipse"

    def __init__(self, a):
        a = float(a)
        if not (0.0 < a <= 1.0):
            raise ValueError(f"semi-axis a must lie in (0, 1], got {a}")
        self.a = a
        self.m = 1.0 - a * a
        self.phi_star = float(ellipe(self.m))
        self.period = 4.0 * self.phi_star
        self._mean_speed = self.phi_star / (math.pi / 2)
        self._table = self._build_table() if self.m > 0.0 else None

    def _build_table(self):
        L = 2.0 * self.phi_star
        n = self.TABLE_NODES
        x = np.linspace(0.0, L, n + 1)
        p = self._newton(x) - x / self._mean_speed
        p[-1] = p[0]
        sp = CubicSpline(x, p, bc_type="periodic")
        coef = np.ascontiguousarray(sp.c)
        h = L / n
        xm = x[:-1] + 0.5 * h
        approx = ((coef[0] * 0.5 * h + coef[1]) * 0.5 * h + coef[2]) * 0.5 * h + coef[3]
        err = np.max(np.abs(approx + xm / self._mean_speed - self._newton(xm)))
        if not err < self.TABLE_TOL:
            return None
        return L, h, coef
    def params(self):
        return {"kind": self.kind, "a": self.a}

    def arclength(self, s):
        return ellipeinc(s, self.m)

    def speed(self, s):
        return np.sqrt(1.0 - self.m * np.sin(s) ** 2)

    def polar_angle(self, phi, tol=ROOT_TOL, max_iter=50):
        phi = np.asarray(phi, dtype=float)
        if self.m == 0.0:
            return phi.copy()
        if self._table is None:
            return self._newton(phi, tol, max_iter)
        L, h, coef = self._table
        y = np.mod(phi, L)
        i = np.minimum((y / h).astype(np.intp), coef.shape[1] - 1)
        dx = y - i * h
        per = ((coef[0, i] * dx + coef[1, i]) * dx + coef[2, i]) * dx + coef[3, i]
        return phi / self._mean_speed + per

    def _newton(self, phi, tol=ROOT_TOL, max_iter=50):
        phi = np.asarray(phi, dtype=float)
        s = phi / self._mean_speed
        for _ in range(max_iter):
            step = (self.arclength(s) - phi) / self.speed(s)
            s = s - step
            if np.max(np.abs(step), initial=0.0) < tol:
                break
        return s

    def g(self, phi):
        return np.sin(self.polar_angle(phi))

    def dg(self, phi):
        s = self.polar_angle(phi)
        return np.cos(s) / self.speed(s)

    def gdg(self, phi):
        phi = np.asarray(phi, dtype=float)
        s = self.polar_angle(phi)
        out = np.sin(s) * np.cos(s) / self.speed(s)
        return np.where(np.abs(phi) == self.phi_star, 0.0, out)

    def d2g(self, phi):
        s = self.polar_angle(phi)
        v = self.speed(s)
        sn, cs = np.sin(s), np.cos(s)
        return -sn / v**2 + self.m * sn * cs**2 / v**4

    def taylor_gdg(self, n_terms=12):
        n = n_terms + 2
        sin2 = _ser_mul(_sin_series(n), _sin_series(n), n)
        # sqrt(1 + y) = sum binom(1/2, j) y^j
        binom = np.array([math.comb(2 * j, j) * (-1) ** (j + 1) / ((2 * j - 1) * 4**j)
                          for j in range(n)])
        speed = _ser_compose(binom, -self.m * sin2, n)
        arc = np.zeros(n)
        arc[1:] = speed[:-1] / np.arange(1, n)
        s_of_phi = _ser_revert(arc, n)
        g = _ser_compose(_sin_series(n), s_of_phi, n)
        dg = np.zeros(n)
        dg[:-1] = g[1:] * np.arange(1, n)
        return _ser_mul(g, dg, n)[:n_terms]


class TabulatedMetric(TargetMetric):
    """Cubic-spline profile built from samples ``(phi_i, g_i)`` with phi_i >= 0.

    The samples are reflected to negative phi before fitting so the spline
    is odd by construction.
    """

    kind = "tabulated"

    def __init__(self, phi, g, periodic=False, phi_max=10.0, source=None,
                 norm_tol=1e-3):
        phi = np.asarray(phi, dtype=float)
        g = np.asarray(g, dtype=float)
        if phi.ndim != 1 or phi.shape != g.shape or phi.size < 4:
            raise BadNormalization("need at least four (phi, g) samples")
        if phi[0] < 0 or np.any(np.diff(phi) <= 0):
            raise BadNormalization("phi samples must be >= 0 and strictly increasing")
        if phi[0] == 0.0:
            if abs(g[0]) > 1e-10:
                raise NotOdd(f"g(0) = {g[0]} but an odd function vanishes at 0")
            phi, g = phi[1:], g[1:]
        xs = np.concatenate([-phi[::-1], [0.0], phi])
        ys = np.concatenate([-g[::-1], [0.0], g])
        self._spline = CubicSpline(xs, ys)
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)
        self.samples = (phi, g)
        self.source = source
        slope0 = float(self._d1(0.0))
        if abs(slope0 - 1.0) > norm_tol:
            raise BadNormalization(f"g'(0) = {slope0:.6g}, expected 1")
        self.phi_star = find_equator(lambda x: self._d1(x), min(phi_max, phi[-1]))
        self.period = 4.0 * self.phi_star if periodic else None
        near = np.abs(phi - self.phi_star) <= 0.25 * self.phi_star
        if np.count_nonzero(near) < 4:
            raise DerivativeUnavailable(
                "too few samples near the equator for a stable second derivative")

    @classmethod
    def from_csv(cls, path, **kw):
        """Read a two-column CSV ``phi, g``; a non-numeric header row is skipped."""
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for i, row in enumerate(csv.reader(fh)):
                if not row or not "".join(row).strip():
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    if i == 0 and not rows:
                        continue
                    raise BadNormalization(f"{path}: bad row {i + 1}: {row!r}")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], source=str(Path(path)), **kw)

    def params(self):
        out = {"kind": self.kind, "periodic": self.period is not None}
        if self.source:
            out["path"] = self.source
        return out

    def _extend(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.period is None:
            return phi, np.ones_like(phi)
        # fold into [-2 phi*, 2 phi*] using periodicity and g(phi* + x) even
        half = 2.0 * self.phi_star
        y = np.mod(phi + half, self.period) - half
        return y, np.ones_like(y)

    def g(self, phi):
        y, _ = self._extend(phi)
        return self._spline(y)

    def dg(self, phi):
        y, _ = self._extend(phi)
        return self._d1(y)

    def d2g(self, phi):
        y, _ = self._extend(phi)
        return self._d2(y)

    def taylor_gdg(self, n_terms=12):
        xmax = min(0.3, self.phi_star / 3.0)
        x = np.linspace(-xmax, xmax, 201)
        odd = np.arange(1, 8, 2)
        A = x[:, None] ** odd[None, :]
        coef, *_ = np.linalg.lstsq(A, self.g(x) * self.dg(x), rcond=None)
        out = np.zeros(n_terms)
        for j, c in zip(odd, coef):
            if j < n_terms:
                out[j] = c
        return out


def make_metric(kind, **params) -> TargetMetric:
    """Build a metric from a kind name: ``sphere``, ``ellipse`` (``a=``) or
    ``tabulated`` (``path=`` or ``phi=``/``g=`` arrays)."""
    kind = kind.lower()
    if kind == "sphere":
        return SphereMetric()
    if kind in ("ellipse", "ellipseofrevolution"):
        return EllipseMetric(params["a"])
    if kind == "tabulated":
        extra = {k: params[k] for k in ("periodic", "phi_max") if k in params}
        if "path" in params:
            return TabulatedMetric.from_csv(params["path"], **extra)
        return TabulatedMetric(params["phi"], params["g"], **extra)
    raise ValueError(f"unknown metric kind {kind!r}")


def metric_derivatives_at_equator(metric):
    """``(g(phi*), g'(phi*), g''(phi*))``."""
    p = np.array([metric.phi_star])
    return (float(metric.g(p)[0]), float(metric.dg(p)[0]), float(metric.d2g(p)[0]))
