"""Controllability toolkit for the bilinear Schroedinger equation on (0, 1).

The model is ``i d/dt psi = (A + u(t) B) psi`` with ``A`` the Dirichlet
Laplacian, truncated to the first ``M`` sine modes.  The package certifies
the spectral hypotheses at finite truncation, computes the perturbed
spectrum of ``A + u0 B``, propagates piecewise-constant controls exactly,
solves real trigonometric moment problems, and builds local (Newton) and
global (resonant pulse) steering controls for several states at once, as
well as for density matrices.
"""

__version__ = "0.1.0"

from .certificates import Certificate
from .errors import *  # noqa: F401,F403
from .spectral_core import *  # noqa: F401,F403
from .operators import *  # noqa: F401,F403
from .perturbation import *  # noqa: F401,F403
from .propagator import *  # noqa: F401,F403
from .moment_solver import *  # noqa: F401,F403
from .local_control import *  # noqa: F401,F403
from .global_control import *  # noqa: F401,F403
from .density import *  # noqa: F401,F403
