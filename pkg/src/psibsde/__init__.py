"""Numerical laboratory for scalar BSDEs with psi-integrable terminal values.

psi(x, mu) = x exp(mu sqrt(2 log(1 + x))) weights the terminal value; the
package simulates Brownian ensembles, solves linearly growing BSDEs by
regression-based backward induction and checks the a-priori bound, the
class (D) property and the uniqueness argument on the discrete solutions.
"""

__version__ = "0.1.0"

from .errors import (CapacityError, ConditioningError, ConfigError, ConvergenceError, DomainError,
                     HypothesisError, InfeasibleSplitError, PsiBSDEError, StepSizeError)
from .kernel import (AdaptedDrift, PathEnsemble, TimeGrid, gauss_moment_check, generate_paths,
                     girsanov_weight, stochastic_integral)
from .psi import (PsiSplit, composition_margin, critical_mu, default_split, log_psi, psi,
                  submultiplicativity_margin, young_gap)
from .solver import (GeneratorSpec, HermiteBasis, PartitionBasis, SolutionField, TerminalSpec,
                     TruncationIndex, extract_sign_drift, make_basis, solve, solve_comparison, solve_truncated, transfer,
                     truncate_terminal)
from .estimates import (StoppingFamily, apriori_bound_check, class_D_diagnostic, default_family,
                        proof_constant)
from .uniqueness import (LinearizationField, WindowSchedule, corrupt_pair,
                         delta_representation_margin, linearize, two_solver_agreement,
                         uniform_integrability_margin, window_schedule)
