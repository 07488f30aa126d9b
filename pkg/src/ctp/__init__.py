"""Coalescing tagged particle among Poisson obstacles: microscopic simulator,
kinetic jump process, marginal volume equation and analysis tools."""

from .errors import CTPError
from .volume_dist import VolumeDistribution
from .obstacle_field import FieldParams, PoissonField, ScriptedField, Region
from .ctp_sim import SimParams, run_trajectory, run_ensemble, SIGMA

__version__ = "0.1.0"
