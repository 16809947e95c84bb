"""Sensor sample types shared by the physics, simulator, and estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# channel order used everywhere a frame becomes a vector
CHANNELS = ("x_a", "x_d", "xdot_d", "a_ux", "a_uy", "a_uz")


@dataclass(frozen=True)
class SensorFrame:
    """One timestamped sample of the chassis sensors for a single corner.

    ``a_u`` is the accelerometer reading of the unsprung body (proper
    acceleration): at rest it reads (0, 0, +g). ``fz_truth`` is optional
    ground truth in newtons.
    """

    t: float
    x_a: float
    x_d: float
    xdot_d: float
    a_u: np.ndarray
    slip_kappa: float = 0.0
    slip_alpha: float = 0.0
    fz_truth: float | None = None

    def __post_init__(self):
        a = np.asarray(self.a_u, dtype=np.float64)
        if a.shape != (3,):
            raise ValidationError(f"a_u must be a 3-vector, got shape {a.shape}")
        object.__setattr__(self, "a_u", a)
        values = [self.t, self.x_a, self.x_d, self.xdot_d,
                  self.slip_kappa, self.slip_alpha, *a]
        if not np.all(np.isfinite(values)):
            raise ValidationError("sensor frame contains non-finite channels")

    def channel_vector(self) -> np.ndarray:
        """The 6-channel input vector (x_a, x_d, xdot_d, a_u)."""
        return np.array([self.x_a, self.x_d, self.xdot_d,
                         self.a_u[0], self.a_u[1], self.a_u[2]])
