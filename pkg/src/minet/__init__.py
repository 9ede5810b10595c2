"""Differentiable CNN runtime for a lightweight multi-scale saliency
network targeting strip-steel surface defect detection.

Subpackages: tensor (autodiff), nn (layers), model (network +
checkpoints), loss, optim, metrics, profiler, data, verify, cli.
"""
__version__ = "0.1.0"

from minet.backend import backend_name
from minet.model import MINet, MINetConfig, MIVariant, load_checkpoint, save_checkpoint
from minet.tensor import Tensor

__all__ = [
    "MINet", "MINetConfig", "MIVariant", "Tensor",
    "backend_name", "load_checkpoint", "save_checkpoint", "__version__",
]
