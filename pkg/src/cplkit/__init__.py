"""Two-participant multi-physics coupling: meshes, data mapping, fixed-point
acceleration, coupling schemes, socket communication and a participant API."""

from .acceleration import Acceleration
from .api import Participant
from .config import load, parse, to_dot, validate
from .cplscheme import READ_CHECKPOINT, WRITE_CHECKPOINT
from .errors import (
    AccelerationError,
    CommError,
    ConfigError,
    CouplingError,
    MappingError,
    MeshError,
    PhaseError,
    UsageError,
)
from .mapping import build_mapping, mapping_error
from .mesh import DataField, Mesh, read_mesh, write_mesh

__version__ = "0.1.0"

__all__ = [
    "Acceleration", "Participant", "load", "parse", "to_dot", "validate",
    "READ_CHECKPOINT", "WRITE_CHECKPOINT", "AccelerationError", "CommError", "ConfigError",
    "CouplingError", "MappingError", "MeshError", "PhaseError", "UsageError",
    "build_mapping", "mapping_error", "DataField", "Mesh", "read_mesh", "write_mesh",
]
