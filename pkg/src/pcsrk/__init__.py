"""Energy-preserving partitioned continuous-stage Runge-Kutta (PCSRK) integrators
for Poisson systems dy/dt = S(y) grad H(y)."""

from .harness import BenchConfig, ExperimentConfig, MethodSpec, bench, converge, drift
from .model import PoissonSystem, constant_s_quadratic, lotka_volterra, make_problem, synthetic_quartic
from .ptrees import (
    BiColouredTree,
    certified_order,
    elementary_weight,
    enumerate_black_rooted,
    exact_coefficient,
    table_quantities,
    verify_appendix,
)
from .quad import QuadratureError, gauss_legendre, integrate_vec
from .stepper import StepConfig, Stepper, integrate, newton_solve, step
from .tableau import (
    FamilyParams,
    PcsrkTableau,
    classic_tableau,
    csrk_alpha_family,
    e_matrix,
    fourth_order_family,
    is_parallelizable,
    validate,
)

__version__ = "0.1.0"
