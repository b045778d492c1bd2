"""Axis-aligned box geometry: overlap, center/corner conversion, occlusion level, box noise."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "Box",
    "DegenerateBox",
    "GeometricFeature",
    "NoiseCoefficients",
    "OcclusionLevel",
    "apply_noise",
    "iou",
    "max_mutual_iou",
    "occlusion_level",
    "sample_noise",
    "to_corner",
    "to_geometric",
]


class DegenerateBox(ValueError):
    """Raised when a zero-width or zero-height box is used where positive extent is required."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in image coordinates, corner format.

    Corners are normalized on construction so that x1 <= x2 and y1 <= y2.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        x1, x2 = (self.x1, self.x2) if self.x1 <= self.x2 else (self.x2, self.x1)
        y1, y2 = (self.y1, self.y2) if self.y1 <= self.y2 else (self.y2, self.y1)
        object.__setattr__(self, "x1", float(x1))
        object.__setattr__(self, "y1", float(y1))
        object.__setattr__(self, "x2", float(x2))
        object.__setattr__(self, "y2", float(y2))

    def width(self) -> float:
        return self.x2 - self.x1

    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return self.width() * self.height()


@dataclass(frozen=True)
class GeometricFeature:
    """Center-format view of a box: center (x, y), width w, height h. Requires w, h > 0."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise DegenerateBox(f"geometric feature requires positive extent, got w={self.w} h={self.h}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class NoiseCoefficients:
    """Dimensionless box perturbation: center shifts (sx, sy) in units of box size, log-size factors (sw, sh)."""

    sx: float
    sy: float
    sw: float
    sh: float


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes; 0.0 when the union has zero area."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    if ix <= 0:
        return 0.0
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    if union <= 0:
        return 0.0
    return inter / union


def to_geometric(b: Box) -> GeometricFeature:
    """Convert a corner-format box to its center-format feature.

    Raises DegenerateBox for zero-width or zero-height boxes.
    """
    w = b.width()
    h = b.height()
    if w == 0 or h == 0:
        raise DegenerateBox(f"box {b} has zero extent")
    return GeometricFeature((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2, w, h)


def to_corner(g: GeometricFeature) -> Box:
    """Inverse of to_geometric."""
    return Box(g.x - g.w / 2, g.y - g.h / 2, g.x + g.w / 2, g.y + g.h / 2)


def apply_noise(b: Box, c: NoiseCoefficients) -> Box:
    """Perturb a box: shift its center by (sx*w, sy*h) and scale its size by (exp(sw), exp(sh)).

    Formulated so that zero coefficients reproduce the input box bit-exactly.
    """
    w = b.width()
    h = b.height()
    dx = c.sx * w
    dy = c.sy * h
    w2 = w * math.exp(c.sw)
    h2 = h * math.exp(c.sh)
    return Box(
        b.x1 + dx + (w - w2) / 2,
        b.y1 + dy + (h - h2) / 2,
        b.x2 + dx + (w2 - w) / 2,
        b.y2 + dy + (h2 - h) / 2,
    )


def sample_noise(rng, zeta_xy: float = 0.05, zeta_wh: float = 0.2) -> NoiseCoefficients:
    """Draw noise coefficients uniformly: shifts from (-zeta_xy, zeta_xy), log-sizes from (-zeta_wh, zeta_wh)."""
    return NoiseCoefficients(
        sx=rng.uniform(-zeta_xy, zeta_xy),
        sy=rng.uniform(-zeta_xy, zeta_xy),
        sw=rng.uniform(-zeta_wh, zeta_wh),
        sh=rng.uniform(-zeta_wh, zeta_wh),
    )


def max_mutual_iou(target: Box, others: Iterable[Box]) -> float:
    """Maximum IoU of `target` against every box in `others`; 0.0 for an empty collection.

    The caller is responsible for excluding `target` itself from `others`.
    """
    best = 0.0
    for other in others:
        v = iou(target, other)
        if v > best:
            best = v
    return best


class OcclusionLevel(enum.Enum):
    BARE = "bare"
    PARTIAL = "partial"
    HEAVY = "heavy"


def occlusion_level(mmiou: float) -> OcclusionLevel:
    """Classify a max-mutual-IoU value: bare (<= 0.2), partial (0.2, 0.5], heavy (> 0.5).

    A value of exactly 0 (a lone object) counts as bare.
    """
    if mmiou <= 0.2:
        return OcclusionLevel.BARE
    if mmiou <= 0.5:
        return OcclusionLevel.PARTIAL
    return OcclusionLevel.HEAVY
