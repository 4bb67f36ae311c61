"""Space-time cylinders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Cylinder", "ParabolicCylinder", "TimeSlab"]


@dataclass(frozen=True)
class Cylinder:
    """Open cylinder ``B_radius(center_x) x (t_min, t_max)``."""

    center_x: tuple
    radius: float
    t_min: float
    t_max: float

    def __post_init__(self):
        object.__setattr__(self, "center_x", tuple(float(v) for v in np.atleast_1d(self.center_x)))
        if not self.radius > 0:
            raise ValueError("cylinder radius must be positive")
        if not self.t_min < self.t_max:
            raise ValueError("need t_min < t_max")

    @property
    def n(self) -> int:
        return len(self.center_x)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.center_x)

    def contains(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d2 = np.sum((x - self.center) ** 2, axis=-1)
        t = np.asarray(t, dtype=float)
        return (d2 < self.radius**2) & (t > self.t_min) & (t < self.t_max)

    def shrink(self, factor: float) -> "Cylinder":
        """Concentric cylinder with radius and duration scaled by ``factor``, same top."""
        return Cylinder(self.center_x, self.radius * factor, self.t_max - factor * (self.t_max - self.t_min), self.t_max)

    def to_dict(self) -> dict:
        return {"center_x": list(self.center_x), "radius": self.radius, "t_min": self.t_min, "t_max": self.t_max}


class ParabolicCylinder(Cylinder):
    """``Q_r(x0, t0) = {|x - x0| < r, |t - t0| < r^2}``."""

    def __init__(self, center_x, center_t: float, r: float):
        if not r > 0:
            raise ValueError("cylinder size must be positive")
        super().__init__(center_x, r, center_t - r * r, center_t + r * r)
        object.__setattr__(self, "center_t", float(center_t))

    @property
    def r(self) -> float:
        return self.radius

    def __repr__(self) -> str:
        return f"ParabolicCylinder(center_x={self.center_x}, center_t={self.center_t}, r={self.r})"

    def __reduce__(self):
        return (ParabolicCylinder, (self.center_x, self.center_t, self.r))


@dataclass(frozen=True)
class TimeSlab:
    """All of space times ``(t_min, t_max)``; either end may be infinite."""

    t_min: float = -math.inf
    t_max: float = math.inf

    def contains(self, x, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t > self.t_min) & (t < self.t_max)
