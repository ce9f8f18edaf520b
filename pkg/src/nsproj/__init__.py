"""Spectral Galerkin simulator for the randomly forced 2D Navier-Stokes system
on the torus, with control, saturation and density diagnostics."""

__version__ = "0.1.0"

from .fourier_torus import (BasisId, SpectralField, SubspaceSpec, basis, basis_enumerate,
                            basis_manifest, embed, evaluate_physical, norm_h, norm_v, project)
from .dynamics import (DivergenceError, ForcingSignal, KickSequence, SimParams, bilinear,
                       kick_chain, rescaled_kick_chain, resolve, rhs, substituted_resolve,
                       tangent_resolve)
from .forcing import (CoefficientLaw, RngStream, sample_colored_gaussian, sample_decomposable,
                      sample_kicks, sample_wiener_path, support_ball_probe)
from .saturation import SymmetricSet, grow_once, saturating_within, subspace_of
from .control import f_k, jacobian, rank_report
from .density import ForcingModel, SampleSet, run_ensemble, stationary_ensemble
