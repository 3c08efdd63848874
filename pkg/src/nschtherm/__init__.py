"""Structure-preserving simulator and certificate engine for a non-isothermal
Navier--Stokes--Cahn--Hilliard system on rectangles.

Modules: :mod:`grid` (operators), :mod:`thermo` (constitutive closures and
scalar inequality scans), :mod:`solver` (time stepping), :mod:`ledger`
(energy/entropy/mass certificates), :mod:`relenergy` (relative energy and
Gronwall verifier), :mod:`generic` (bracket structure checks) and
:mod:`cli`.
"""

__version__ = "0.1.0"

from .errors import (BudgetExceeded, ConfigError, DomainError, GridMismatch, IncompatibleRHS,
                     NonConvergence, NSCHError, PositivityLoss, TimeMismatch)
from .grid import Grid
from .thermo import PhysParams
from .solver import SchemeControls, State, make_state, run, step

__all__ = [
    "BudgetExceeded", "ConfigError", "DomainError", "GridMismatch", "IncompatibleRHS",
    "NonConvergence", "NSCHError", "PositivityLoss", "TimeMismatch", "Grid", "PhysParams",
    "SchemeControls", "State", "make_state", "run", "step", "__version__",
]
