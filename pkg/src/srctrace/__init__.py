"""Verification-style source tracing of speech-deepfake attacks on embeddings."""
from .kernels import IMPLEMENTATION as KERNELS

__version__ = "0.1.0"
__all__ = ["KERNELS", "__version__"]
