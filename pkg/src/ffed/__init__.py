"""Functionally fitted energy-diminishing integrators for gradient systems."""
from .basis import (
    GeneratorSet,
    InterpolationBasis,
    OrthonormalBasis,
    fitted_generators,
    lagrange_basis,
    monomial_generators,
    orthonormalize,
    project,
    projection_kernel,
)
from .errors import (
    DegenerateBasis,
    NonConvergence,
    OracleSelfConsistencyFailure,
    SingularMatrix,
    SingularNodeMatrix,
)
from .integrators import (
    Method,
    MethodConfig,
    StepResult,
    Trajectory,
    effed_step,
    ffed_step_constant,
    ffed_step_general,
    integrate,
    make_stepper,
)
from .baselines import BaselineConfig, avf_step, avfc_step, eei_step, implicit_euler_step
from .numkit import FixedPointConfig, QuadratureRule, expm, fixed_point_solve, gauss_legendre, phi_functions
from .systems import GradientSystem, Problem, StiffSplit, get_problem, make_rotcubic, make_stiff_demo, validate

__version__ = "0.1.0"
