"""Tattoo retrieval with template reconstruction.

Submodules
----------
synthgen   semi-synthetic tattooed-skin sample generation
model      cyclic image/template translation, embedding backbones, losses, training
retrieval  gallery enrollment and cosine-similarity search
evalkit    closed-set CMC and open-set FNIR/FPIR evaluation
cli        command-line entry point
"""

from .errors import InvalidStateError

__version__ = "0.1.0"

__all__ = ["InvalidStateError", "__version__"]
