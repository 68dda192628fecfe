"""Independent reference values.

Each value is derived symbolically (sympy) or by an independent scipy
quadrature in :func:`derive`, then frozen in :data:`FROZEN`.
``test_oracles.py`` re-derives them and checks the frozen copies, so the
package tests below never depend on package code for their expectations.
"""

import math

FROZEN = {
    # Shatah profile, round sphere, d = 3, l = 1
    "ee_equator_d3": 2.0,
    "ee_shatah_d3": 3 * math.pi / 2 - 3,          # 1.7123889803846897
    "eh_shatah_d3": math.pi / 2 - 2,              # -0.42920367320510344
    "ee_equator_d7": 6 / 5,
    # second variations at the equator of the round sphere
    "sv_ee_d7_one_minus_r": 3 / 35,
    "sv_ee_d3_one_minus_r": -1 / 3,
    "sv_eh_d3_one_minus_r2": -8 / 15,
    # Hardy ratio, d = 3, elliptic, w = 1 - r
    "hardy_d3_one_minus_r": 1.0,
    # Jager-Kaul squared semi-axis thresholds
    "jk_d3": 8.0,
    "jk_d7": 24 / 25,
    # equator of the ellipse a = 0.5: int_0^{pi/2} sqrt(cos^2 + a^2 sin^2)
    "ellipse_phi_star_a05": 1.2110560275684594,
    # Taylor coefficients of 2 arctan(rho)
    "shatah_taylor": (0.0, 2.0, 0.0, -2 / 3, 0.0, 2 / 5, 0.0, -2 / 7),
}


def derive():
    """Recompute every frozen value without touching the package."""
    import sympy as sp
    from scipy.integrate import quad

    r = sp.symbols("r", positive=True)
    p = 2 * sp.atan(r)
    out = {}
    out["ee_equator_d3"] = sp.integrate(2 / r**2 * r**2, (r, 0, 1))
    out["ee_shatah_d3"] = sp.integrate(
        sp.simplify((sp.diff(p, r) ** 2 + 2 / r**2 * sp.sin(p) ** 2) * r**2), (r, 0, 1))
    out["eh_shatah_d3"] = sp.integrate(
        sp.simplify((sp.diff(p, r) ** 2 + 2 / (r**2 * (1 - r**2)) * (sp.sin(p) ** 2 - 1))
                    * r**2), (r, 0, 1))
    out["ee_equator_d7"] = sp.integrate(6 / r**2 * r**6, (r, 0, 1))
    w = 1 - r
    out["sv_ee_d7_one_minus_r"] = sp.integrate((sp.diff(w, r) ** 2 - 6 * w**2 / r**2) * r**6,
                                               (r, 0, 1))
    out["sv_ee_d3_one_minus_r"] = sp.integrate((sp.diff(w, r) ** 2 - 2 * w**2 / r**2) * r**2,
                                               (r, 0, 1))
    w2 = 1 - r**2
    out["sv_eh_d3_one_minus_r2"] = sp.integrate(
        sp.simplify((sp.diff(w2, r) ** 2 - 2 * w2**2 / (r**2 * (1 - r**2))) * r**2), (r, 0, 1))
    out["hardy_d3_one_minus_r"] = (sp.integrate(w**2, (r, 0, 1))
                                   / sp.integrate(sp.diff(w, r) ** 2 * r**2, (r, 0, 1)))
    d = sp.symbols("d", positive=True)
    jk = 4 * (d - 1) / (d - 2) ** 2
    out["jk_d3"] = jk.subs(d, 3)
    out["jk_d7"] = jk.subs(d, 7)
    out["ellipse_phi_star_a05"] = quad(
        lambda s: math.sqrt(math.cos(s) ** 2 + 0.25 * math.sin(s) ** 2), 0, math.pi / 2,
        epsabs=1e-14, epsrel=1e-14)[0]
    rho = sp.symbols("rho")
    ser = sp.series(2 * sp.atan(rho), rho, 0, 8).removeO()
    out["shatah_taylor"] = tuple(float(ser.coeff(rho, j)) for j in range(8))
    return {k: (v if isinstance(v, tuple) else float(v)) for k, v in out.items()}


def shatah_ode_residual_symbolic():
    """Symbolic residual of the d = 3 profile equation at ``2 arctan rho``."""
    import sympy as sp

    rho = sp.symbols("rho", positive=True)
    psi = 2 * sp.atan(rho)
    res = (rho**2 * (1 - rho**2) * sp.diff(psi, rho, 2)
           + rho * (2 - 2 * rho**2) * sp.diff(psi, rho)
           - 2 * sp.sin(psi) * sp.cos(psi))
    return sp.simplify(sp.expand_trig(res))


def log_slope_symbolic():
    """Coefficient ``s`` of ``log(1 - rho)`` in ``psi'`` for d = 3.

    Substitutes ``psi' = c + s log(1 - rho)`` into the equation with
    ``k g g'(psi(1)) = h`` frozen at rho = 1 and takes the limit.
    """
    import sympy as sp

    rho, s, c, h = sp.symbols("rho s c h")
    dpsi = c + s * sp.log(1 - rho)
    expr = rho**2 * (1 - rho**2) * sp.diff(dpsi, rho) + rho * (2 - 2 * rho**2) * dpsi - h
    lim = sp.limit(expr, rho, 1, "-")
    return sp.solve(sp.Eq(lim, 0), s)[0], h
