"""Epsilon-near-zero core-shell resonance toolkit.

Subpackages solve the singular Helmholtz transmission problem where a thin
high-contrast shell (relative permittivity delta -> 0) surrounds a dielectric
core: perturbation series in delta, finite-delta eigensolves, resonance
tracing under a lossy Lorentz dispersion, and convex-relaxed optimal shell
design.
"""

from enzres.errors import EnzresError, InputError, NumericalError

__all__ = ["EnzresError", "InputError", "NumericalError"]
__version__ = "0.1.0"
