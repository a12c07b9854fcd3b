"""Gibbs-measure quasi-invariance toolkit for the truncated defocusing NLS.

Modules
-------
fourier_state
    Truncated Fourier states, norms, the Hamiltonian and its gradient.
gibbs
    Gaussian sampling, Gibbs reweighting and Monte Carlo estimators.
poly
    Sparse Fourier polynomials, Poisson brackets and the homological operator.
normal_form
    Construction and checks of the sixth-order approximate invariant.
dynamics
    Strang splitting for the Galerkin flow and conservation diagnostics.
harness
    Drift experiments, Chebyshev bookkeeping and scaling fits.
"""
from .dynamics import IntegratorConfig, Trajectory, conservation_report, evolve, step_strang
from .fourier_state import (FourierState, ModelParams, action, evaluate_P, gradient_H,
                            hamiltonian, hs_norm, load_state, save_state)
from .gibbs import SamplerConfig, WeightedSample, draw, estimate_mean, gibbs_weight, sample_gaussian
from .harness import (DriftRecord, ExperimentConfig, corollary_all_modes, estimate_bad_set,
                      run_drift_experiment, verify_constituent_bounds, verify_lemma,
                      verify_phi_dot_norm)
from .normal_form import (CutoffSpec, NormalFormPackage, build_package, phi6_evaluate,
                          phi6_time_derivative)
from .poly import (ModulatedPolynomial, SparsePolynomial, evaluate, gradient,
                   kernel_range_split, lh2_apply, lh2_invert, poisson_bracket, sup_norm)

__version__ = "0.1.0"

__all__ = [
    "CutoffSpec", "DriftRecord", "ExperimentConfig", "FourierState", "IntegratorConfig",
    "ModelParams", "ModulatedPolynomial", "NormalFormPackage", "SamplerConfig",
    "SparsePolynomial", "Trajectory", "WeightedSample", "action", "build_package",
    "conservation_report", "corollary_all_modes", "draw", "estimate_bad_set", "estimate_mean",
    "evaluate", "evaluate_P", "evolve", "gibbs_weight", "gradient", "gradient_H", "hamiltonian",
    "hs_norm", "kernel_range_split", "lh2_apply", "lh2_invert", "load_state",
    "phi6_evaluate", "phi6_time_derivative", "poisson_bracket", "run_drift_experiment",
    "sample_gaussian", "save_state", "step_strang", "sup_norm", "verify_constituent_bounds",
    "verify_lemma", "verify_phi_dot_norm",
]
