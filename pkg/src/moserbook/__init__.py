"""Open books, return maps and regularization for the spatial restricted three-body problem."""

from .errors import MoserBookError
from .phase import Chart, RegState, StarkZeemanField, SystemSpec, UnregState, reg_to_unreg, unreg_to_reg

__all__ = [
    "Chart",
    "MoserBookError",
    "RegState",
    "StarkZeemanField",
    "SystemSpec",
    "UnregState",
    "reg_to_unreg",
    "unreg_to_reg",
]
__version__ = "0.1.0"
