"""Joint learning of a latent edge-probability distribution and a graph
predictor, with distributional losses that calibrate the latent graph."""

from .edge_dist import EdgeDistribution
from .kernels import KernelSpec
from .losses import LossConfig, LossEstimate
from .poly_gnn import PolyGnn
from .trainer import RunRecord, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "EdgeDistribution",
    "KernelSpec",
    "LossConfig",
    "LossEstimate",
    "PolyGnn",
    "RunRecord",
    "TrainConfig",
    "__version__",
]
