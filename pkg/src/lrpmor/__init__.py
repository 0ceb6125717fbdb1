"""Parametric model-order reduction for systems with a low-rank parameter term.

The transfer function of ``E x' = (A0 - U diag(p) V^T) x + B u``, ``y = C x``
is split into four parameter-free subsystems via the Sherman--Morrison--
Woodbury identity.  These are reduced independently (balanced truncation) or
sampled once and refitted per parameter (vector fitting), and the resulting
surrogates drive H2-norm parameter optimization.
"""

from .exceptions import *  # noqa: F401,F403
from .numerics import LyapunovSolver, h2_norm, linf_norm_estimate, solve_lyapunov
from .systems import (LowRankParametricSystem, ParametricReducedModel, StateSpaceSystem,
                      assemble_realization, check_hinf_bound, check_positive_real_sampled,
                      check_uniform_stability, eval_parametric_direct, eval_parametric_smw,
                      subsystems)
from .reduction import BalancedTruncation, BTResult, balanced_truncation, hankel_singular_values
from .vectfit import FrequencySampleSet, VectorFitting, VFResult, initial_poles, vector_fit
from .pmor import (Alg1Config, OfflineSamples, SampledVectorFitting, SubsystemReducer,
                   error_bound_f, reduce_subsystems, sample_subsystems, vf_reduce_at_parameter)
from .optimize import (OptimConfig, OptimReport, nelder_mead, optimize_full,
                       surrogate_optimize_alg3, surrogate_optimize_alg4)
from .bench import (OscillatorConfig, generate_oscillator, generate_penzl, load_matrix_market,
                    write_matrix_market)

__version__ = "0.1.0"
