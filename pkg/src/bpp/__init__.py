"""Bingham policy parameterization for rotation-valued actions.

Submodules: ``rotmath`` (quaternions and rotations), ``bingham`` (density
and transforms), ``normconst`` (N(Z) quadrature, envelope root, fitted
approximators), ``diffnet`` (small MLPs with manual gradients), ``sampler``
(exact rejection sampling), ``wahba`` (one-step environment), ``rlkit``
(PPO) and ``cli``.
"""

from .bingham import BinghamParams, entropy, log_pdf, mode
from .normconst import QuadratureProvider, envelope_b, quad_log_N, solve_b
from .sampler import build_envelope, sample_bingham

__version__ = "0.1.0"

__all__ = [
    "BinghamParams",
    "QuadratureProvider",
    "build_envelope",
    "entropy",
    "envelope_b",
    "log_pdf",
    "mode",
    "quad_log_N",
    "sample_bingham",
    "solve_b",
]
