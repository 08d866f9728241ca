"""Inertial parameter identification for a free-flying rigid body."""

from .dynamics import ActuationMatrix, InertialParams, RigidBodyState, Wrench, default_actuation_matrix
from .errors import FreeFlyerError

__all__ = ["ActuationMatrix", "InertialParams", "RigidBodyState", "Wrench", "default_actuation_matrix",
           "FreeFlyerError"]
__version__ = "0.1.0"
