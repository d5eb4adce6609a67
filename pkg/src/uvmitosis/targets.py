"""Box annotations to two-channel Gaussian heatmap targets.

Coordinates are pixel-index coordinates: ``x`` is the column, ``y`` the row,
and pixel ``(row, col)`` sits at ``(x=col, y=row)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

LABELS = ("mitosis", "hard_negative")
CHANNEL = {label: i for i, label in enumerate(LABELS)}


@dataclass(frozen=True)
class BoxAnnotation:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    label: str = "mitosis"

    def __post_init__(self):
        if self.label not in CHANNEL:
            raise ValueError(f"unknown label {self.label!r}; expected one of {LABELS}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}): need min < max"
            )

    def check_bounds(self, height: int, width: int) -> None:
        if self.x_min < 0 or self.y_min < 0 or self.x_max > width or self.y_max > height:
            raise ValueError(
                f"box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}) outside {width}x{height} image"
            )

    def to_json(self) -> dict:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max,
                "label": self.label}

    @classmethod
    def from_json(cls, d: dict) -> "BoxAnnotation":
        return cls(d["x_min"], d["y_min"], d["x_max"], d["y_max"], d.get("label", "mitosis"))


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = 8.0
    truncation_radius: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.truncation_radius is None:
            object.__setattr__(self, "truncation_radius", 3.0 * self.sigma)
        if self.truncation_radius < 3 * self.sigma:
            raise ValueError(
                f"truncation_radius {self.truncation_radius} must be >= 3*sigma = {3 * self.sigma}"
            )


def box_centroid(box: BoxAnnotation) -> tuple[float, float]:
    return ((box.x_min + box.x_max) / 2, (box.y_min + box.y_max) / 2)


def centroids_from_boxes(boxes: Iterable[BoxAnnotation]) -> list[tuple[float, float, str]]:
    return [(*box_centroid(b), b.label) for b in boxes]


def nearest_pixel(x: float, y: float, height: int, width: int) -> tuple[int, int]:
    """(row, col) of the pixel nearest a continuous point, clamped to the image."""
    col = min(max(int(np.floor(x + 0.5)), 0), width - 1)
    row = min(max(int(np.floor(y + 0.5)), 0), height - 1)
    return row, col


def render_heatmap(centroids, spec: GaussianSpec, height: int, width: int) -> np.ndarray:
    """Render ``(2, height, width)`` heatmaps; overlapping kernels combine by max."""
    heat = np.zeros((len(LABELS), height, width))
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    r2max = spec.truncation_radius**2
    for x, y, label in centroids:
        if label not in CHANNEL:
            raise ValueError(f"unknown label {label!r}")
        if not (0 <= x <= width and 0 <= y <= height):
            raise ValueError(f"centroid ({x}, {y}) outside {width}x{height} image")
        d2 = (cols - x) ** 2 + (rows - y) ** 2
        g = np.exp(-d2 / (2 * spec.sigma**2))
        g[d2 > r2max] = 0.0
        ch = heat[CHANNEL[label]]
        np.maximum(ch, g, out=ch)
        ch[nearest_pixel(x, y, height, width)] = 1.0
    return heat
