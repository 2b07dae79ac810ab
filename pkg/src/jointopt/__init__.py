"""Contact simulation and stiffness-driven shape optimization of two-part joints."""

from .geometry import DesignSpace, JointGeometry, build_geometry, validate_params
from .fem import Material, LoadCase
from .contact import PenaltyConfig, SolveState
from .simulate import JointModel, SimConfig
from .adjoint import fd_gradient, grad_wrt_mesh_coords, grad_wrt_params
from .optimize import NoisyObjective, ObjectiveConfig, OptimizerConfig

__version__ = "0.1.0"

__all__ = [
    "DesignSpace",
    "JointGeometry",
    "build_geometry",
    "validate_params",
    "Material",
    "LoadCase",
    "PenaltyConfig",
    "SolveState",
    "JointModel",
    "SimConfig",
    "fd_gradient",
    "grad_wrt_mesh_coords",
    "grad_wrt_params",
    "NoisyObjective",
    "ObjectiveConfig",
    "OptimizerConfig",
]
