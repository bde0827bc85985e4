from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, top-left corner plus size, in pixels."""
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box needs positive size, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_xysr(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0, self.w * self.h, self.w / self.h)

    @classmethod
    def from_xysr(cls, cx, cy, s, r) -> "Box":
        w = math.sqrt(s * r)
        h = s / w
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)


def iou(a: Box, b: Box) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return min(1.0, max(0.0, inter / union))
