"""Synthetic test objects rendered onto grid fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SupportViolationError
from .fields import ScalarGridField

__all__ = ["Primitive", "PhantomSpec", "render"]


def _smooth_profile(s, sharpness):
    """Radial profile on normalized distance s: 1 at center, 0 at s >= 1.

    ``sharpness`` in [0, 1): 0 gives a hard indicator, larger values shrink
    the flat core and widen the smoothstep shoulder.
    """
    if sharpness <= 0:
        return (s <= 1.0).astype(float)
    core = 1.0 - sharpness
    t = np.clip((1.0 - s) / sharpness, 0.0, 1.0)
    t = np.where(s <= core, 1.0, t)
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class Primitive:
    """One phantom component: 'ellipsoid', 'box', or 'bump'."""

    shape: str
    center: tuple
    radii: tuple          # per-axis semi-axes / half-widths / bump radius
    amplitude: float = 1.0
    smoothness: float = 0.0

    def __post_init__(self):
        if self.shape not in ("ellipsoid", "box", "bump"):
            raise ConfigError(f"unknown primitive shape {self.shape!r}")
        if not np.isfinite(self.amplitude):
            raise ConfigError("primitive amplitude must be finite")

    def evaluate(self, pts):
        c = np.asarray(self.center, dtype=float)
        r = np.asarray(self.radii, dtype=float)
        u = (pts - c[None, :]) / r[None, :]
        if self.shape == "box":
            s = np.abs(u).max(axis=1)
            return self.amplitude * _smooth_profile(s, self.smoothness)
        s = np.sqrt((u ** 2).sum(axis=1))
        if self.shape == "ellipsoid":
            return self.amplitude * _smooth_profile(s, self.smoothness)
        # C-infinity bump: exp(1 - 1/(1 - s^2)) inside the unit ball
        out = np.zeros(len(pts))
        inside = s < 1.0
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si ** 2))
        return self.amplitude * out

    def to_dict(self):
        return {"shape": self.shape, "center": list(self.center),
                "radii": list(self.radii), "amplitude": self.amplitude,
                "smoothness": self.smoothness}

    @staticmethod
    def from_dict(d):
        return Primitive(d["shape"], tuple(d["center"]), tuple(d["radii"]),
                         d.get("amplitude", 1.0), d.get("smoothness", 0.0))


@dataclass
class PhantomSpec:
    """Sum of primitives over a constant background, with a declared support box."""

    primitives: list = field(default_factory=list)
    background: float = 0.0
    support_lo: tuple = None
    support_hi: tuple = None

    def to_dict(self):
        d = {"primitives": [p.to_dict() for p in self.primitives],
             "background": self.background}
        if self.support_lo is not None:
            d["support_lo"] = list(self.support_lo)
            d["support_hi"] = list(self.support_hi)
        return d

    @staticmethod
    def from_dict(d):
        return PhantomSpec(
            [Primitive.from_dict(p) for p in d.get("primitives", [])],
            d.get("background", 0.0),
            tuple(d["support_lo"]) if "support_lo" in d else None,
            tuple(d["support_hi"]) if "support_hi" in d else None,
        )


def render(spec: PhantomSpec, grid: ScalarGridField) -> ScalarGridField:
    """Sample the phantom at cell centers; deterministic.

    When the spec declares a support box, any nonzero beyond one cell outside
    it raises SupportViolationError.
    """
    pts = grid.cell_centers()
    vals = np.full(len(pts), float(spec.background))
    for p in spec.primitives:
        vals += p.evaluate(pts)
    out = grid.like(vals.reshape(grid.dims))
    if spec.support_lo is not None:
        lo = np.asarray(spec.support_lo, dtype=float) - grid.spacing
        hi = np.asarray(spec.support_hi, dtype=float) + grid.spacing
        outside = ((pts < lo[None, :]) | (pts > hi[None, :])).any(axis=1)
        bad = outside & (np.abs(vals - spec.background) > 0)
        if bad.any():
            k = int(np.nonzero(bad)[0][0])
            raise SupportViolationError(
                f"{int(bad.sum())} nonzero cells outside declared support, e.g. {pts[k]}")
    return out
