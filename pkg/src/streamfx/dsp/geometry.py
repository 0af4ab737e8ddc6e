"""Interferometer baseline geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class BaselineGeometry:
    baseline: tuple[float, float, float]  # metres
    direction: tuple[float, float, float]  # unit vector towards the source
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        b = np.asarray(self.baseline, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if b.shape != (3,) or d.shape != (3,):
            raise ValueError("baseline and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError(f"direction must be a unit vector, |d| = {np.linalg.norm(d)!r}")
        object.__setattr__(self, "baseline", tuple(b))
        object.__setattr__(self, "direction", tuple(d))


def geometric_delay(g: BaselineGeometry) -> float:
    """Arrival-time difference ``(B . d) / c`` in seconds."""
    return float(np.dot(g.baseline, g.direction) / g.c)


def baseline_count(n_antennae: int) -> int:
    if n_antennae < 0:
        raise ValueError("antenna count must be >= 0")
    return n_antennae * (n_antennae - 1) // 2
