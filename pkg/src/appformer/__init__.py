"""Next-app usage prediction with multi-modal progressive fusion."""

from .tensor import Parameter, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "Parameter", "__version__"]
