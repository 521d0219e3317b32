"""Magnetic Lorentz gas simulator and its low-density limit jump process."""

from .boltzmann import (
    BoltzmannPath,
    LimitTrajectory,
    build_flow,
    sample_impact_vector,
    sample_path,
)
from .coupling import CoupledPair, InadmissiblePathError, couple, deviation
from .density import DensityGrid, GaussianIsotropic, GridSpec, PointMass
from .field import FieldConfig, Scatterer, ScattererField
from .geometry import (
    MagneticConfig,
    ParticleState,
    SelfRecollisionGeometry,
    advance_free,
    first_hit,
    larmor_center,
    reflect,
    rotate,
    scatter,
    scattering_angle,
    self_recollision_map,
)
from .lorentz import CollisionEvent, TrajectoryRecord, impacts, run_trajectory

__version__ = "0.1.0"
