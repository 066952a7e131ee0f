"""Classical and refined mean-field approximations for synchronous
discrete-time population models, with exact and Monte Carlo validation
tooling.
"""

from .core import (KernelError, PopmfError, PopulationModel, SimplexError,
                   TransitionKernel, as_occupancy, phi1, renormalize,
                   tangent_basis, trajectory)
from .derivatives import (contract, fd_hessian, fd_jacobian, hessian_phi1,
                          jacobian_phi1)
from .refined import (Functional, FunctionalEvaluationError, RefinementState,
                      functional_correction, gamma, identity_functional,
                      refine, refine_functional, refined_covariance,
                      refined_mean)
from .steady import (FixedPointReport, MaxIterationsExceeded, NonConvergent,
                     Stability, SteadyRefinement, find_fixed_point,
                     lyapunov_w, lyapunov_w_direct, solve_steady,
                     steady_functional, tangent_spectral_radius, v_infinity)
from .simulator import (CountState, ExactChain, SimulationSummary,
                        SingularSystem, StateSpaceTooLarge,
                        counts_from_fractions, exact_stationary,
                        exact_transient, simulate, step)
from .models import (BUILTINS, BuiltinModel, MrdlParams, SeirParams,
                     TwoStateParams, WsnParams, consensus_functional,
                     constant_kernel_model, mrdl, response_time_functional,
                     seir, two_state, two_state_fixed_point, wsn)

__version__ = "0.1.0"
