"""Finite-difference propagator for the wave equation with a moving Dirichlet obstacle."""

from __future__ import annotations

from .grid import (BOUNDARY_MODES, NORM_VARIANTS, BlowUpError, CFLViolation, EnergyReading,
                   EvolveError, Grid, GridError, LatticeError, Schedule, StepPlan, WaveState)
from .norms import GrowthBound, NormSample, fit_growth_bound, operator_norm_estimate
from .propagator import Propagator
from .radial import HuygensResult, RadialSolver, exact_radial, huygens_check
from .snapshot import read_snapshot, write_snapshot

__all__ = [
    "BOUNDARY_MODES", "NORM_VARIANTS", "BlowUpError", "CFLViolation", "EnergyReading",
    "EvolveError", "Grid", "GridError", "LatticeError", "Schedule", "StepPlan", "WaveState",
    "GrowthBound", "NormSample", "fit_growth_bound", "operator_norm_estimate", "Propagator",
    "HuygensResult", "RadialSolver", "exact_radial", "huygens_check", "read_snapshot",
    "write_snapshot",
]
