"""Local stability of the equator map.

The equator is a local minimiser of the elliptic energy exactly when
``q = k g(phi*) g''(phi*)`` is at least ``-(d-2)^2/4``, the sharp Hardy
constant.  This module evaluates that criterion, the two second-variation
quadratic forms and the weighted Hardy ratios, and turns the forms into
sign verdicts by minimising their Rayleigh quotients over a fixed
20-function test space.

Test space: ``w_i(r) = b(r) r^(-(d-2)/2 + delta_i)`` with ``delta_i``
geometric in [0.3, 12] and boundary factor ``b = 1 - r`` (elliptic form) or
``b = (1 - r^2)^((d+1)/4)`` (hyperbolic form, which needs decay at r = 1).
Exponents just above the Hardy-critical one let the space approach the
sharp constant.  Rayleigh quotients are normalised by the Hardy weight,
so their minimum sits near ``q + (d-2)^2/4``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import (DivergentEnergy, EndpointSingular, GridTooCoarse,
                     ZeroDenominator)
from .geometry import EquivarianceClass, TargetMetric, metric_derivatives_at_equator
from .quadrature import DEFAULT_RULE, RadialQuadrature
from .radial import RadialFunction, as_radial

MARGINAL_BAND = 1e-10
BASIS_SIZE = 20


def hardy_threshold(d):
    return -((d - 2) ** 2) / 4.0


def hardy_constant(d):
    return 4.0 / (d - 2) ** 2


def jager_kaul_threshold(d):
    """Squared semi-axis ``4(d-1)/(d-2)^2`` above which the ellipsoid's
    equator is the unique minimiser (covariant case)."""
    if d < 3:
        raise ValueError("d must be >= 3")
    return 4.0 * (d - 1) / (d - 2) ** 2


def equator_coupling(metric: TargetMetric, cls: EquivarianceClass) -> float:
    g0, _, g2 = metric_derivatives_at_equator(metric)
    return cls.k * g0 * g2


def classify(q_star, threshold, band=MARGINAL_BAND):
    gap = q_star - threshold
    if abs(gap) <= band:
        return "Marginal"
    return "Stable" if gap > 0 else "Unstable"


@dataclass
class CriterionReport:
    q_star: float
    threshold: float
    verdict: str
    rayleigh_ee: float
    rayleigh_eh: float
    strichartz_ok: bool

    @property
    def local_min_ee(self):
        return self.verdict

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


# --- weights ----------------------------------------------------------------

def _weights(d, hyperbolic, r, x):
    """Gradient and potential weights; ``x = 1 - r``."""
    if not hyperbolic:
        return r ** (d - 1), r ** (d - 3)
    omr2 = x * (1.0 + r)
    return (r ** (d - 1) * omr2 ** (-(d - 3) / 2.0),
            r ** (d - 3) * omr2 ** (-(d - 1) / 2.0))


def _quadratic_form(d, q, w, hyperbolic, tol, rule):
    w = as_radial(w)

    def integrand(r, x):
        grad_w, pot_w = _weights(d, hyperbolic, r, x)
        val = w(r)
        return w.derivative(r) ** 2 * grad_w + q * val * val * pot_w

    exc = dict(origin_exc=GridTooCoarse, one_exc=EndpointSingular,
               what="second-variation integrand")
    if tol is None:
        return float(rule.integrate(integrand, **exc))
    val, _ = rule.integrate_checked(integrand, tol, **exc)
    return float(val)


def second_variation_ee(metric, cls, w, tol=None, rule: RadialQuadrature = DEFAULT_RULE):
    """``int_0^1 (w_r^2 + q w^2 / r^2) r^(d-1) dr`` with ``q = k g g''(phi*)``.

    ``w`` must vanish at r = 1.  With ``tol`` set, the value is compared
    against a coarser rule and :class:`GridTooCoarse` is raised if they
    disagree by more than ``tol``.
    """
    q = equator_coupling(metric, cls)
    return _quadratic_form(cls.d, q, w, False, tol, rule)


def second_variation_eh(metric, cls, w, tol=None, rule: RadialQuadrature = DEFAULT_RULE):
    """Second variation of the hyperbolic energy at the equator,
    ``int (w_r^2 + q w^2 / (r^2 (1-r^2))) r^(d-1) (1-r^2)^(-(d-3)/2) dr``.
    """
    q = equator_coupling(metric, cls)
    return _quadratic_form(cls.d, q, w, True, tol, rule)


def hardy_ratio(d, w, variant="Elliptic", rule: RadialQuadrature = DEFAULT_RULE):
    """Ratio of the weighted L^2 norm of ``w`` to that of ``w_r`` (squared).

    Elliptic: ``int w^2 r^(d-3) / int w_r^2 r^(d-1)``.
    Hyperbolic: the same with weights ``(1-r^2)^(-(d-1)/2)`` and
    ``(1-r^2)^(-(d-3)/2)``.  Both are bounded by ``4/(d-2)^2``.
    """
    hyperbolic = variant.lower().startswith("hyp")
    w = as_radial(w)

    def integrand(r, x):
        grad_w, pot_w = _weights(d, hyperbolic, r, x)
        val = w(r)
        return np.stack([val * val * pot_w, w.derivative(r) ** 2 * grad_w])

    num, den = rule.integrate(integrand, origin_exc=DivergentEnergy,
                              one_exc=EndpointSingular, what="Hardy integrand")
    if den <= 0.0 or not np.isfinite(den):
        raise ZeroDenominator("w_r vanishes identically")
    return float(num / den)


def hardy_near_optimizer(d, eps):
    """``r^(-(d-2)/2 + eps) - r``: admissible, Hardy ratio -> 4/(d-2)^2 as eps -> 0."""
    p = -(d - 2) / 2.0 + eps
    return RadialFunction(lambda r: r ** p - r, lambda r: p * r ** (p - 1.0) - 1.0,
                          f"near_optimizer(eps={eps:g})")


# --- Rayleigh quotients -----------------------------------------------------

def trial_basis(d, hyperbolic, size=BASIS_SIZE):
    """Callable ``(r, x) -> (W, dW)`` evaluating the test space on nodes."""
    deltas = np.geomspace(0.3, 12.0, size)
    p = -(d - 2) / 2.0 + deltas
    beta = (d + 1) / 4.0 if hyperbolic else 1.0

    def evaluate(r, x):
        if hyperbolic:
            omr2 = x * (1.0 + r)
            pref = omr2 ** beta
            dpref = -2.0 * beta * r * omr2 ** (beta - 1.0)
        else:
            pref = x
            dpref = -np.ones_like(r)
        rp = r[None, :] ** p[:, None]
        drp = p[:, None] * r[None, :] ** (p[:, None] - 1.0)
        return pref * rp, dpref * rp + pref * drp

    return evaluate


def rayleigh_minimum(d, q, hyperbolic, size=BASIS_SIZE, rule=DEFAULT_RULE):
    """Smallest Rayleigh quotient ``Q(w) / N(w)`` over the test space.

    ``Q`` is the second-variation form with coupling ``q`` and ``N`` the
    Hardy-weighted L^2 norm, so the result is ``q + D/N`` with ``D/N``
    bounded below by ``(d-2)^2/4``.
    """
    basis = trial_basis(d, hyperbolic, size)

    def gram(r, x):
        W, dW = basis(r, x)
        grad_w, pot_w = _weights(d, hyperbolic, r, x)
        K = dW[:, None, :] * dW[None, :, :] * grad_w
        M = W[:, None, :] * W[None, :, :] * pot_w
        return np.stack([K, M])

    K, M = rule.integrate(gram, origin_exc=GridTooCoarse,
                          one_exc=EndpointSingular, what="Gram integrand")
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    # orthonormalise against M, dropping numerically dependent directions
    ev, V = np.linalg.eigh(M)
    keep = ev > 1e-13 * ev.max()
    T = V[:, keep] / np.sqrt(ev[keep])
    A = T.T @ K @ T
    lam = np.linalg.eigvalsh(0.5 * (A + A.T))[0]
    return float(q + lam)


def local_criterion(metric, cls, rule=DEFAULT_RULE, basis_size=BASIS_SIZE) -> CriterionReport:
    """Evaluate the local equator criterion and both Rayleigh minima."""
    q = equator_coupling(metric, cls)
    thr = hardy_threshold(cls.d)
    return CriterionReport(
        q_star=q,
        threshold=thr,
        verdict=classify(q, thr),
        rayleigh_ee=rayleigh_minimum(cls.d, q, False, basis_size, rule),
        rayleigh_eh=rayleigh_minimum(cls.d, q, True, basis_size, rule),
        strichartz_ok=bool(q > thr),
    )
