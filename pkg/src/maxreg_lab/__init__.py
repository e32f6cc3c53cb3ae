"""Finite-dimensional testbed for maximal regularity operators of analytic semigroups."""
from .operator_core import (Operator, OperatorError, SpectralInfo, make_operator, random_accretive,
                            random_hermitian_positive, spectral_info)
from .semigroup import expm_neg, propagator, quadratic_estimate, quadratic_estimate_constant
from .timegrid import GridFunction, TimeGrid, log_grid, log_panels, uniform_grid, weighted_norm
from .fractional import frac_power, kato_audit, kato_bound
from .maxreg import (AssembledOperator, assemble_Mminus, assemble_Mplus, beta_sweep,
                     counterexample_growth, mminus_extension, trace_criterion, weighted_opnorm)
from .cotlar import almost_orthogonality_audit, assemble_Tu, reconstruct_Mplus
from .cauchy import duhamel_v, recover_trace, solve_ivp, weak_residual

__version__ = "0.1.0"
