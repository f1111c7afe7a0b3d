"""Group co-saliency detection on a small numpy autodiff engine."""
from .model import GLNet, ModelConfig, forward_group
from .tensor import Tensor

__version__ = "0.1.0"
__all__ = ["GLNet", "ModelConfig", "Tensor", "forward_group", "__version__"]
