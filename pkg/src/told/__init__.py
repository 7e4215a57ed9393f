"""Third-order Langevin diffusion: analytic kernels, training, sampling.

Two schemes share the drift family F(gamma, xi): TOLD with eigenvalues
{-1, -2, -3} and the critically damped TOLD++ with a triple eigenvalue
-sqrt(3). The package provides their closed-form perturbation kernels
(`dynamics`), Euler-Maruyama forward/reverse simulation (`sde`), a
from-scratch score-matching trainer (`score`), toy datasets (`data`),
comparison metrics (`metrics`), and a CLI (`told ...`) tying the
experiments together.
"""

from .dynamics import DynamicsParams, PhaseState, Scheme

__version__ = "0.1.0"

__all__ = ["DynamicsParams", "PhaseState", "Scheme", "__version__"]
