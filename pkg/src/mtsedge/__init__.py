"""Edge detection with windowed tensor-summation layers.

A reduction backbone of multiscale tensor-summation blocks estimates the
non-edge content of an image; a residual gate subtracts it; a small U-shaped
refinement net turns the residue into edge probability maps. Pure numpy plus
optional numba kernels, with a tape-based reverse-mode engine for training.
"""

from .config import NetworkConfig, RunConfig, load_config
from .errors import (ConfigError, DataError, DegenerateSampleError,
                     GeometryError, MtsEdgeError, TrainingError)
from .model import (SideOutputs, count_flops, count_params, init_params,
                    net_forward)

__version__ = "0.1.0"

__all__ = [
    "NetworkConfig", "RunConfig", "load_config",
    "ConfigError", "DataError", "DegenerateSampleError", "GeometryError",
    "MtsEdgeError", "TrainingError",
    "SideOutputs", "count_flops", "count_params", "init_params", "net_forward",
    "__version__",
]
