"""Numerical toolkit for metastable states born from embedded eigenvalues.

Survival amplitudes of a perturbed embedded eigenvalue are computed through
the scalar Feshbach (SLFG) function and the Stone formula, with the
first-order corrected ansatz giving an ε⁴ decay law when the Fermi Golden
Rule constant vanishes.
"""

__version__ = "0.1.0"

from .cauchy import (HolderDensity, ModulusOfContinuity, cauchy_boundary, cauchy_boundary_deriv,
                     cauchy_offaxis, holder_norm, holder_seminorm, smooth_cutoff)
from .model import (FactoredPerturbation, SpectralModel, StateVector, TwoChannelSpec, build_friedrichs,
                    build_two_channel, fgr_constant, load_model, poly_bump)
from .resolvent import g_matrix, s_apply, sandwich
from .ansatz import Ansatz, AnsatzFrame, w_tilde
from .feshbach import (Resonance, f0, f0_function, f1, f1_function, lorentzian_diagnostics,
                       resonance_position, slfg_function)
from .dynamics import (AmplitudeSeries, ScalingReport, amplitude_direct, amplitude_stone,
                       lower_bound_model, scaling_study, sup_error)

__all__ = [
    "HolderDensity", "ModulusOfContinuity", "cauchy_boundary", "cauchy_boundary_deriv", "cauchy_offaxis",
    "holder_norm", "holder_seminorm", "smooth_cutoff",
    "FactoredPerturbation", "SpectralModel", "StateVector", "TwoChannelSpec", "build_friedrichs",
    "build_two_channel", "fgr_constant", "load_model", "poly_bump",
    "g_matrix", "s_apply", "sandwich",
    "Ansatz", "AnsatzFrame", "w_tilde",
    "Resonance", "f0", "f0_function", "f1", "f1_function", "lorentzian_diagnostics",
    "resonance_position", "slfg_function",
    "AmplitudeSeries", "ScalingReport", "amplitude_direct", "amplitude_stone", "lower_bound_model",
    "scaling_study", "sup_error",
]
