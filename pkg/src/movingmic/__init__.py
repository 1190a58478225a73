"""Sound field estimation with a moving microphone.

Kernel ridge regression over a space of discrete-time sound fields, a random
Fourier feature approximation, an image-source simulator and NMSE evaluation.
"""
from movingmic.kernels import KernelSpec
from movingmic.moving import KrrModel, MovingMeasurement

__version__ = "0.1.0"

__all__ = ["KernelSpec", "KrrModel", "MovingMeasurement"]
