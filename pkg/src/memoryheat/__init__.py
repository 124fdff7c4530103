"""Coleman-Gurtin heat conduction with memory under Beltrami conductivity.

Simulation and verification toolkit: conductivity tensors from Beltrami
coefficients, memory kernels, the discrete divergence-form operator, the
Dafermos history variable, IMEX time stepping, energy diagnostics, and a
periodic Beurling-transform resolvent model.
"""

__version__ = "0.1.0"

from .errors import ConfigError, NumericalError, SolverError
from .grid import Grid

__all__ = ["ConfigError", "NumericalError", "SolverError", "Grid", "__version__"]
