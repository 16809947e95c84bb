"""Dynamic wheel-load estimation toolkit.

Linkage-level suspension physics as ground-truth generator and prior,
plus a variational Bayesian estimator with bounded multiplicative noise
and damper-conditioned feature-wise modulation.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    NumericalError,
    ValidationError,
    WheelLoadError,
)
