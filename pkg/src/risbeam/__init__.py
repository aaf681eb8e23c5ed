"""RIS-assisted multiuser MISO joint beamforming toolkit.

Channel simulation, a trainable network with a differentiable soft-to-hard
phase quantization layer, the comparative-search and penalty-based training
procedures, imperfect-CSI averaged losses, and oracle/baseline solvers for
verification at desk scale.
"""

from ._kernels import backend_name
from .config import SystemConfig, TrainConfig

__version__ = "0.1.0"

__all__ = ["SystemConfig", "TrainConfig", "backend_name", "__version__"]
