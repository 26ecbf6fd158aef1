"""Wave-domain neural network simulator: trainable metasurface stacks inside MIMO links."""

__version__ = "0.1.0"

from . import tensor  # noqa: F401
