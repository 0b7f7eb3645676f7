"""Active search for stiff regions by robotic palpation.

Gaussian-process stiffness maps, region-level acquisition functions, Dubins
motion primitives optimized by the cross-entropy method, and a simulator that
scores recall of stiff regions against a synthetic ground truth.
"""
__version__ = "0.1.0"

from .gp import FactorizationError, GpModel, Kernel, Prediction, fit, prior  # noqa: E402
from .grids import DomainGrid, RegionGrid  # noqa: E402

__all__ = [
    "__version__",
    "DomainGrid",
    "FactorizationError",
    "GpModel",
    "Kernel",
    "Prediction",
    "RegionGrid",
    "fit",
    "prior",
]
