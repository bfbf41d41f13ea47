"""Objective-trajectory super-resolution: one generator, a continuum of objectives.

A single conditioned generator covers a one-parameter family of weighted
loss objectives; per-pixel grid search finds locally optimal objectives, and
a predictor estimates those maps for unseen inputs.
"""

__version__ = "0.1.0"

from .errors import ArchiveError, ConfigurationError, DomainError, ObjtrajError, TrainingDiverged
from .objective_space import (
    ObjectiveMap,
    ObjectiveTrajectory,
    ObjectiveWeights,
    constant_map,
    trajectory_eval,
    trajectory_p2,
    trajectory_p1234,
)

__all__ = [
    "ArchiveError",
    "ConfigurationError",
    "DomainError",
    "ObjtrajError",
    "TrainingDiverged",
    "ObjectiveMap",
    "ObjectiveTrajectory",
    "ObjectiveWeights",
    "constant_map",
    "trajectory_eval",
    "trajectory_p1234",
    "trajectory_p2",
    "__version__",
]
