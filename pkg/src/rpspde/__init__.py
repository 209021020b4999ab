"""Random periodic solutions of semilinear SPDEs with hyperbolic linear part."""
from .config import ExperimentConfig, load_config
from .convolution import Modulation, PeriodicProcess, compute_y1, y1_periodic_window
from .errors import (HyperbolicityViolation, InvalidRange, NonFiniteResult, NotConverged,
                     ParseError, RPSError, SingularKernel, TruncationTooShort, ValidationError)
from .estimator import RandomPeriodicSolver, StochasticConvolution
from .fixed_point import (IterationReport, SolverConfig, apply_M, apply_M_at, bound_certificates,
                          contraction_estimate, picard_solve)
from .integrator import (Trajectory, VerificationReport, integrate_forward, temperedness_diagnostic,
                         verify_random_periodic, verify_stationary)
from .malliavin import (AlphaSolution, MalliavinKernel, directional_derivative_check, dr_y1,
                        propagate_dr_M, solve_alpha)
from .noise import NoisePath, generate_path, load_path, save_path, shift
from .nonlinearity import (ConstantFieldNonlinearity, Nonlinearity, SineNonlinearity,
                           TruncatedNonlinearity, apply_nemytskii)
from .pipeline import RunReport, run_pipeline
from .spectral import Field, SpectralOperator, build_interval_operator, semigroup_apply, split

__version__ = "0.1.0"
