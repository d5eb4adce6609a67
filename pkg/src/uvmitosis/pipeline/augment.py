"""Joint image/target augmentation: random flips and scaling about the centre."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    vflip: bool = True
    scale_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= 1 <= hi):
            raise ValueError(f"scale_range must satisfy 0 < lo <= 1 <= hi, got {self.scale_range}")


@dataclass(frozen=True)
class AugmentRecord:
    hflip: bool = False
    vflip: bool = False
    scale: float = 1.0

    def transform_points(self, points, height: int, width: int) -> np.ndarray:
        """Map (x, y) points through the same transform applied to the arrays."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2).copy()
        if self.hflip:
            pts[:, 0] = width - 1 - pts[:, 0]
        if self.vflip:
            pts[:, 1] = height - 1 - pts[:, 1]
        centre = np.array([(width - 1) / 2, (height - 1) / 2])
        return (pts - centre) * self.scale + centre


def sample_record(config: AugmentConfig, rng: np.random.Generator) -> AugmentRecord:
    hflip = bool(config.hflip and rng.random() < 0.5)
    vflip = bool(config.vflip and rng.random() < 0.5)
    lo, hi = config.scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return AugmentRecord(hflip, vflip, scale)


def _scale(arr: np.ndarray, s: float, order: int, mode: str) -> np.ndarray:
    # (C, H, W); output pixel o samples input at (o - c)/s + c
    _, h, w = arr.shape
    centre = np.array([0.0, (h - 1) / 2, (w - 1) / 2])
    inv = np.diag([1.0, 1 / s, 1 / s])
    return ndimage.affine_transform(arr, inv, offset=centre - inv @ centre, order=order, mode=mode, cval=0.0)


def apply_record(image: np.ndarray, target: np.ndarray, record: AugmentRecord) -> tuple[np.ndarray, np.ndarray]:
    """Apply a recorded transform to a ``(C, H, W)`` image and its ``(K, H, W)`` target."""
    if image.shape[1:] != target.shape[1:]:
        raise ValueError(f"image {image.shape} and target {target.shape} are not spatially aligned")
    if record.hflip:
        image, target = image[:, :, ::-1], target[:, :, ::-1]
    if record.vflip:
        image, target = image[:, ::-1, :], target[:, ::-1, :]
    if record.scale != 1.0:
        image = _scale(image, record.scale, order=1, mode="nearest")
        target = _scale(target, record.scale, order=0, mode="constant")
    return np.ascontiguousarray(image), np.ascontiguousarray(target)


def augment(image, target, config: AugmentConfig, rng: np.random.Generator):
    """Randomly flip/scale ``image`` and ``target`` together; returns (image, target, record)."""
    record = sample_record(config, rng)
    image, target = apply_record(np.asarray(image), np.asarray(target), record)
    return image, target, record
