"""Synthetic cerebral 3D OCTA volumes from vessel graphs."""
from ._backend import BACKEND

__version__ = "0.1.0"
