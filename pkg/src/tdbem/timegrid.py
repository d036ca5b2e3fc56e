"""Uniform time grid and temporal basis functions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Mesh, mesh_diameter


class TemporalBasis(str, enum.Enum):
    """``CONSTANT``: indicator of ``[t_{n-1}, t_n)``.  ``HAT``: piecewise
    linear hat centred at ``t_n``; all hats vanish at ``t = 0``."""

    CONSTANT = "constant"
    HAT = "hat"

    @property
    def support_steps(self) -> int:
        """Number of extra lags a basis function reaches beyond its node."""
        return 0 if self is TemporalBasis.CONSTANT else 1


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_final_time(cls, dt: float, T: float) -> "TimeGrid":
        return cls(dt, int(round(T / dt)))

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def t(self, n) -> np.ndarray | float:
        """Time node ``t_n = n * dt`` (computed, never accumulated)."""
        return np.asarray(n) * self.dt

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


def basis_value(kind: TemporalBasis, n: int, t, dt: float) -> np.ndarray:
    """Evaluate temporal basis function number ``n >= 1`` at times ``t``."""
    t = np.asarray(t, dtype=float)
    if kind is TemporalBasis.CONSTANT:
        return ((t >= (n - 1) * dt) & (t < n * dt)).astype(float)
    return np.maximum(0.0, 1.0 - np.abs(t / dt - n))


def cfl_ratio(grid: TimeGrid, mesh: Mesh) -> float:
    """``dt / h_min**beta``; values above one suggest a too coarse time step."""
    return grid.dt / mesh.h_min**mesh.beta


def lag_cutoff(grid: TimeGrid, mesh: Mesh | float) -> int:
    """Smallest lag beyond which piecewise constant lag matrices vanish."""
    diam = mesh if isinstance(mesh, (int, float)) else mesh_diameter(mesh)
    ratio = diam / grid.dt
    # guard against ratios like 200.00000000000003
    return int(math.ceil(ratio - 1e-12 * max(1.0, ratio)))
