"""Variational physics-informed neural networks on 2D quadrilateral meshes
with the loss assembled as batched tensor contractions."""

from .errors import VpinnError

__version__ = "0.1.0"

__all__ = ["VpinnError", "__version__"]
