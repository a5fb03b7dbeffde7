"""Data-free adversarial knowledge distillation on a small numpy autodiff core."""
from .autodiff import Tensor, backward, no_grad
from .data import LabeledBatch, LatentBatch, make_grid, make_two_moons, sample_latent
from .distill import DistillConfig, run_distillation
from .evaluation import accuracy, agreement, boundary_report
from .nn import Network, forward, init_network

__all__ = [
    "Tensor", "backward", "no_grad",
    "LabeledBatch", "LatentBatch", "make_grid", "make_two_moons", "sample_latent",
    "DistillConfig", "run_distillation",
    "accuracy", "agreement", "boundary_report",
    "Network", "forward", "init_network",
]
