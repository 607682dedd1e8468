"""Radical-pair magnetometry toolkit.

Simulates spin-correlated radical pairs under motion-modulated dipolar,
exchange, and recombination couplings; evaluates reaction-yield anisotropy
and classical/quantum Fisher information of the steady-state probe; and
optimises piecewise-constant interradical trajectories for yield contrast.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    FieldSpec,
    Geometry,
    HarmonicMotion,
    Nucleus,
    PiecewiseMotion,
    Rates,
    SpinSystem,
    StaticMotion,
)
from .dynamics import IntegratorConfig, SimulationResult, propagate, steady_state  # noqa: F401
