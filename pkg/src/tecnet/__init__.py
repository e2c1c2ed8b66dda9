"""tecnet: dual-branch CNN/transformer segmentation on a small autodiff engine."""

from .engine import Tensor, Tape, backward

__version__ = "0.1.0"
__all__ = ["Tensor", "Tape", "backward", "__version__"]
