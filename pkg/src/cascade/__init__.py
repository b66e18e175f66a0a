"""Simulation and verification workbench for a stochastically forced
dyadic shell model of turbulence.

Subpackage layout:

- :mod:`cascade.model` -- operators, norms, fluxes, drift (pure functions)
- :mod:`cascade.integrator` -- reproducible SDE time stepping
- :mod:`cascade.stats` -- mergeable online moments and stationary reports
- :mod:`cascade.linearize` -- tangent flow, Gram matrices, control cycles
- :mod:`cascade.hormander` -- symbolic Lie brackets and span certificates
- :mod:`cascade.experiments` -- experiment configs, orchestration, CSV output
- :mod:`cascade.cli` -- the ``cascade`` command line
"""

from cascade.model import (
    CascadeError,
    ParameterError,
    ShapeMismatchError,
    ShellIndexError,
    ShellParams,
    ShellState,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeError",
    "ParameterError",
    "ShapeMismatchError",
    "ShellIndexError",
    "ShellParams",
    "ShellState",
    "__version__",
]
