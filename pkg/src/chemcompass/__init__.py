"""Singlet-yield simulation and optimization for radical-pair chemical compasses."""

from .analytic import AnalyticParams, regime1_approx, weakfield_sensitivity, yield_avg, yield_branch
from .control import HarmonicControl, PiecewiseControl, control_hamiltonian, control_value
from .dynamics import (
    build_liouvillian,
    propagate,
    singlet_yield_quadrature,
    singlet_yield_resolvent,
    singlet_yields,
)
from .model import (
    GAMMA_E,
    DephasingSpec,
    FieldDirection,
    HyperfineTensor,
    NucleusSpec,
    RadicalPairModel,
    build_hamiltonian,
    dephasing_operators,
    initial_state,
    singlet_projector,
)
from .optimize import (
    ControlConstraints,
    OptimizationReport,
    OptimizerOptions,
    nelder_mead,
    optimize_control,
    optimize_hyperfine,
)
from .sensitivity import AngularResponse, YieldEvaluator, angular_response, sensitivity_scan

__version__ = "0.1.0"
