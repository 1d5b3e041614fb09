"""Scenario description: initial blobs, velocity field and time step."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .octree import cell_centers


@dataclass(frozen=True)
class Blob:
    center: tuple = (0.5, 0.5, 0.5)
    width: float = 0.05
    amplitude: float = 1.0


def _default_blobs():
    return (Blob((0.3, 0.5, 0.5), 0.05, 1.0), Blob((0.7, 0.5, 0.5), 0.05, 1.0))


@dataclass(frozen=True)
class ScenarioConfig:
    """A scalar field advected by solid-body rotation about the z axis.

    The velocity is ``(vx - w*(y - 1/2), vy + w*(x - 1/2), vz)`` with
    ``w = angular_velocity``.  A sub-grid is refined when any of its cells
    exceeds ``threshold`` and coarsened when all 8 siblings stay at or below
    ``threshold / 2``.  ``dt=None`` picks the largest step with Courant
    number ``cfl``.
    """

    max_level: int = 4
    cells_per_edge: int = 8
    threshold: float = 0.1
    regrid_interval: int = 10
    blobs: tuple = field(default_factory=_default_blobs)
    angular_velocity: float = 2 * math.pi
    velocity: tuple = (0.0, 0.0, 0.0)
    diffusion: float = 0.0
    dt: float = None
    cfl: float = 0.4
    steps: int = 100

    def __post_init__(self):
        blobs = tuple(b if isinstance(b, Blob) else Blob(**b) for b in self.blobs)
        object.__setattr__(self, "blobs", tuple(
            Blob(tuple(float(c) for c in b.center), float(b.width), float(b.amplitude)) for b in blobs
        ))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))

    @property
    def min_dx(self):
        return 1.0 / (self.cells_per_edge << self.max_level)

    def max_speeds(self):
        half_w = abs(self.angular_velocity) * 0.5
        vx, vy, vz = self.velocity
        return abs(vx) + half_w, abs(vy) + half_w, abs(vz)

    def rate(self):
        dx = self.min_dx
        return sum(self.max_speeds()) / dx + 6.0 * self.diffusion / (dx * dx)

    @property
    def time_step(self) -> float:
        if self.dt is not None:
            return float(self.dt)
        rate = self.rate()
        return self.cfl / rate if rate > 0 else self.min_dx

    def courant(self):
        return self.time_step * self.rate()

    def validate(self):
        if not isinstance(self.max_level, int) or self.max_level < 0:
            raise ConfigurationError(f"max_level must be an int >= 0, got {self.max_level!r}")
        n = self.cells_per_edge
        if not isinstance(n, int) or n < 2 or n % 2:
            raise ConfigurationError(f"cells_per_edge must be an even int >= 2, got {n!r}")
        if self.regrid_interval < 0:
            raise ConfigurationError("regrid_interval must be >= 0 (0 disables regridding)")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.diffusion < 0:
            raise ConfigurationError("diffusion must be >= 0")
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        for b in self.blobs:
            if len(b.center) != 3 or not b.width > 0:
                raise ConfigurationError(f"bad blob {b!r}")
        c = self.courant()
        if c > 1.0 + 1e-12:
            raise ConfigurationError(f"time step violates the stability bound (Courant number {c:.3f} > 1)")
        return self

    def to_dict(self):
        d = asdict(self)
        d["blobs"] = [asdict(b) for b in self.blobs]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["blobs"] = tuple(Blob(**b) if isinstance(b, dict) else b for b in d.get("blobs", ()))
        if "velocity" in d:
            d["velocity"] = tuple(d["velocity"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # field evaluation --------------------------------------------------

    def field_at(self, x, y, z):
        out = np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z)))
        for b in self.blobs:
            cx, cy, cz = b.center
            r2 = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
            out += b.amplitude * np.exp(-r2 / (2.0 * b.width * b.width))
        return out

    def evaluate(self, node):
        """Initial cell values of ``node`` sampled at its cell centres."""
        n = self.cells_per_edge
        x = cell_centers(node.level, node.index, n, 0)[:, None, None]
        y = cell_centers(node.level, node.index, n, 1)[None, :, None]
        z = cell_centers(node.level, node.index, n, 2)[None, None, :]
        return self.field_at(x, y, z)

    def normal_velocity(self, axis, x=None, y=None):
        """Velocity component along ``axis`` (u_x depends on y only, u_y on x only)."""
        vx, vy, vz = self.velocity
        w = self.angular_velocity
        if axis == 0:
            return vx - w * (y - 0.5)
        if axis == 1:
            return vy + w * (x - 0.5)
        return np.float64(vz)

    def needs_refinement(self, cells):
        return bool((cells > self.threshold).any())

    def allows_coarsening(self, cells):
        return bool((cells <= 0.5 * self.threshold).all())


def two_blob_scenario(max_level=4, steps=100, **overrides) -> ScenarioConfig:
    """The default desk-scale workload: two Gaussian blobs orbiting the centre."""
    return ScenarioConfig(max_level=max_level, steps=steps, **overrides)
