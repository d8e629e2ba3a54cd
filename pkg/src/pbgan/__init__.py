"""Desk-scale continual learning for image-conditioned GANs.

New tasks compose most of their convolution filters from a frozen,
growing filter bank (linear mixing of reshaped bank filters) plus a small
unconstrained block that joins the bank once the task finishes.  Old
tasks' generators are bitwise stable forever.
"""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
