"""Composite Gauss-Legendre quadrature on (0, 1) with graded endpoints.

Radial integrands in this package are singular (but integrable) at one or
both ends of the unit interval: powers of r at the origin and powers of
1 - r, sometimes times logarithms, at r = 1.  Both ends are mapped to
half-lines, r = exp(-s) near 0 and 1 - r = exp(-u) near 1, and covered by
uniform Gauss-Legendre panels.  The pieces beyond the last panel are closed
with a local power-law fit, which is exact for pure powers and flags
non-integrable behaviour.

Integrands are called as ``f(r, x)`` with ``x = 1 - r`` supplied separately
so that weights like ``(1 - r**2)**(-m)`` can be formed without
cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergentEnergy, EndpointSingular, GridTooCoarse

_DIVERGENCE_MARGIN = 1e-6
_NEGLIGIBLE = 1e-8


def _gauss_panels(a, b, n_panels, order):
    """Nodes and weights of ``n_panels`` uniform GL panels on [a, b]."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def _power_tail(f0, f1, h0):
    """Integral of a local power law from the endpoint out to distance h0.

    ``f0`` is the integrand at distance ``h0`` from the endpoint and ``f1``
    at distance ``h0 * e``.  Returns ``(tail, exponent)``; the exponent is
    NaN where no power law could be fitted.
    """
    f0 = np.atleast_1d(np.asarray(f0, dtype=float))
    f1 = np.atleast_1d(np.asarray(f1, dtype=float))
    tail = f0 * h0
    gamma = np.full(f0.shape, np.nan)
    ok = (f0 != 0.0) & (np.sign(f0) == np.sign(f1))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.log(np.abs(f1[ok]) / np.abs(f0[ok]))
    gamma[ok] = g
    fit = ok.copy()
    fit[ok] = g > -1.0 + _DIVERGENCE_MARGIN
    tail[fit] = f0[fit] * h0 / (gamma[fit] + 1.0)
    return tail, gamma


@dataclass
class RadialQuadrature:
    """Quadrature rule for integrals over (0, 1).

    Parameters
    ----------
    n_panels : int
        Panels per half; the rule has ``2 * n_panels * order`` nodes.
    order : int
        Gauss-Legendre points per panel.
    s_max, u_max : float
        Depth of the logarithmic maps; the rule resolves
        ``exp(-s_max) <= r`` and ``exp(-u_max) <= 1 - r``.
    """

    n_panels: int = 32
    order: int = 16
    s_max: float = 40.0
    u_max: float = 36.0
    r: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s, ws = _gauss_panels(np.log(2.0), self.s_max, self.n_panels, self.order)
        u, wu = _gauss_panels(np.log(2.0), self.u_max, self.n_panels, self.order)
        r0 = np.exp(-s)
        x1 = np.exp(-u)
        self.r = np.concatenate([r0[::-1], 1.0 - x1])
        self.x = np.concatenate([1.0 - r0[::-1], x1])
        self.w = np.concatenate([(ws * r0)[::-1], wu * x1])
        h0 = np.exp(-self.s_max)
        h1 = np.exp(-self.u_max)
        # endpoint probes for the tail fits
        self._probe_r = np.array([h0, h0 * np.e, 1.0 - h1, 1.0 - h1 * np.e])
        self._probe_x = np.array([1.0 - h0, 1.0 - h0 * np.e, h1, h1 * np.e])
        self._h0 = h0
        self._h1 = h1

    @property
    def size(self):
        return self.r.size

    def coarser(self):
        return RadialQuadrature(max(self.n_panels // 2, 1), self.order,
                                self.s_max, self.u_max)

    def integrate(self, func, origin_exc=DivergentEnergy,
                  one_exc=EndpointSingular, what="integrand"):
        """Integrate ``func(r, x)`` over (0, 1).

        ``func`` may return an array with leading axes; integration runs
        over the last axis.  Raises ``origin_exc`` / ``one_exc`` when the
        fitted endpoint exponent is not integrable.
        """
        rr = np.concatenate([self.r, self._probe_r])
        xx = np.concatenate([self.x, self._probe_x])
        vals = np.asarray(func(rr, xx), dtype=float)
        if vals.shape[-1] != rr.size:
            vals = np.broadcast_to(vals, vals.shape[:-1] + (rr.size,))
        n = self.r.size
        body = vals[..., :n] @ self.w
        p = vals[..., n:]
        if not np.all(np.isfinite(vals)):
            raise one_exc(f"non-finite {what} on the quadrature grid")
        tail0, g0 = _power_tail(p[..., 0], p[..., 1], self._h0)
        tail1, g1 = _power_tail(p[..., 2], p[..., 3], self._h1)
        tail0 = tail0.reshape(np.shape(body))
        tail1 = tail1.reshape(np.shape(body))
        # a divergent power law makes f * h at the probe comparable to the
        # whole integral; probes at rounding level carry no information
        scale = _NEGLIGIBLE * np.abs(np.atleast_1d(body))
        lim = -1.0 + _DIVERGENCE_MARGIN
        bad0 = (g0 <= lim) & (np.abs(np.atleast_1d(p[..., 0])) * self._h0 > scale)
        bad1 = (g1 <= lim) & (np.abs(np.atleast_1d(p[..., 2])) * self._h1 > scale)
        if np.any(bad0):
            raise origin_exc(f"{what} is not integrable at r = 0 "
                             f"(local exponent {np.nanmin(g0):.3f})")
        if np.any(bad1):
            raise one_exc(f"{what} is not integrable at r = 1 "
                          f"(local exponent {np.nanmin(g1):.3f})")
        return body + tail0 + tail1

    def integrate_checked(self, func, tol, **kw):
        """Integrate and compare against the rule with half the panels.

        Returns ``(value, error_estimate)``; raises :class:`GridTooCoarse`
        when the estimate exceeds ``tol``.
        """
        fine = self.integrate(func, **kw)
        coarse = self.coarser().integrate(func, **kw)
        err = float(np.max(np.abs(np.asarray(fine) - np.asarray(coarse))))
        if tol is not None and err > tol:
            raise GridTooCoarse(f"quadrature error estimate {err:.3e} exceeds {tol:.3e}")
        return fine, err


DEFAULT_RULE = RadialQuadrature()


def gauss_interval(func, a, b, n_panels=64, order=16):
    """Plain composite Gauss-Legendre integral of ``func`` over [a, b]."""
    nodes, weights = _gauss_panels(a, b, n_panels, order)
    return np.asarray(func(nodes)) @ weights


def log_graded_interval(func, a, b, side, depth=36.0, n_panels=32, order=16):
    """Integrate over [a, b] with logarithmic grading toward one endpoint.

    ``side`` is ``"right"`` (singularity at b) or ``"left"`` (at a).
    ``func`` receives ``(t, dist)`` where ``dist`` is the distance to the
    singular endpoint.  The part closer than ``exp(-depth)`` times the
    interval length is dropped; callers use this only for integrands that
    are bounded up to logarithms.
    """
    length = b - a
    u, wu = _gauss_panels(0.0, depth, n_panels, order)
    dist = length * np.exp(-u)
    w = wu * dist
    t = b - dist if side == "right" else a + dist
    return np.asarray(func(t, dist)) @ w
