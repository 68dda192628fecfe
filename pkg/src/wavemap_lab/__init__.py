"""Numerical laboratory for equivariant wave maps into rotationally
symmetric targets with an equator.

Submodules: ``geometry`` (targets), ``stability`` (equator criterion and
Hardy ratios), ``profiles`` (self-similar profile shooting), ``energy``
(elliptic and hyperbolic energies and their minimisation), ``wave``
(radial evolution and energy ledgers), ``config`` and ``cli``.
"""

from .errors import *  # noqa: F401,F403
from .geometry import (EllipseMetric, EquivarianceClass, SphereMetric, TabulatedMetric,
                       TargetMetric, eigen_k, make_metric, metric_derivatives_at_equator)
from .stability import (CriterionReport, hardy_ratio, jager_kaul_threshold,
                        local_criterion, second_variation_eh, second_variation_ee)
from .profiles import (NotFound, ProfileSolution, classify_endpoint, frobenius_start,
                       integrate_profile, profile_with_jump, shoot_smooth_profile,
                       weak_ode_residual)
from .energy import EnergyReport, energy_eh, energy_ee, minimize_eh, minimize_ee
from .wave import (RadialGrid, Trajectory, WaveState, build_self_similar, evolve,
                   evolve_linearized, verify_energy_equality)

__version__ = "0.1.0"
