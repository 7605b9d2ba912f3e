"""Simulation and analysis toolkit for high-dimensional BB84 with structured photons.

Modules: :mod:`spinorbit` (Jones/OAM optics), :mod:`mubs` (bases and
preparation recipes), :mod:`turbulence`, :mod:`linksim` (link Monte Carlo),
:mod:`detection` and :mod:`protocol` (matrices, QBER, key rates),
:mod:`keyrate_dual` (numerical key-rate bound), :mod:`encdemo` and :mod:`cli`.
"""

__version__ = "0.1.0"

from .detection import DetectionMatrix, load_fixture, read_matrix
from .mubs import make_mubs
from .protocol import entropy_d, key_rate_analytic, qber, threshold_q0

__all__ = [
    "DetectionMatrix",
    "__version__",
    "entropy_d",
    "key_rate_analytic",
    "load_fixture",
    "make_mubs",
    "qber",
    "read_matrix",
    "threshold_q0",
]
