"""Synthetic H&E-like patches with dark mitosis blobs and paler hard negatives.

Images are rendered through the Beer-Lambert stain model, so they are also
valid inputs for stain normalisation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..stain import od_to_rgb
from ..targets import BoxAnnotation
from .data import DatasetManifest, ManifestEntry, write_rgb

HEMATOXYLIN_OD = np.array([0.60, 0.70, 0.38])
EOSIN_OD = np.array([0.25, 0.80, 0.54])
HEMATOXYLIN_OD = HEMATOXYLIN_OD / np.linalg.norm(HEMATOXYLIN_OD)
EOSIN_OD = EOSIN_OD / np.linalg.norm(EOSIN_OD)


@dataclass(frozen=True)
class SynthSpec:
    size: int = 64
    sigma: float = 3.0
    max_mitoses: int = 3
    max_negatives: int = 2
    radius_range: tuple[float, float] = (2.5, 4.5)
    mitosis_h: tuple[float, float] = (1.5, 2.0)
    negative_h: tuple[float, float] = (0.55, 0.8)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Blob:
    cx: float
    cy: float
    a: float
    b: float
    theta: float
    label: str

    def mask(self, size: int) -> np.ndarray:
        rows, cols = np.mgrid[0:size, 0:size]
        dx, dy = cols - self.cx, rows - self.cy
        c, s = np.cos(self.theta), np.sin(self.theta)
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0

    def box(self, size: int) -> BoxAnnotation:
        rr, cc = np.nonzero(self.mask(size))
        return BoxAnnotation(int(cc.min()), int(rr.min()), int(cc.max()), int(rr.max()), self.label)


def _place_blobs(rng: np.random.Generator, spec: SynthSpec) -> list[Blob]:
    r_lo, r_hi = spec.radius_range
    min_sep = max(2 * spec.sigma, 2 * r_hi + 3)
    margin = r_hi + 1
    n_mit = int(rng.integers(0, spec.max_mitoses + 1))
    n_neg = int(rng.integers(0, spec.max_negatives + 1))
    labels = ["mitosis"] * n_mit + ["hard_negative"] * n_neg
    blobs: list[Blob] = []
    for label in labels:
        for _ in range(200):
            cx, cy = rng.uniform(margin, spec.size - 1 - margin, size=2)
            if all((cx - o.cx) ** 2 + (cy - o.cy) ** 2 >= min_sep**2 for o in blobs):
                a, b = np.sort(rng.uniform(r_lo, r_hi, size=2))[::-1]
                blobs.append(Blob(float(cx), float(cy), float(a), float(b), float(rng.uniform(0, np.pi)), label))
                break
    return blobs


def render_patch(rng: np.random.Generator, spec: SynthSpec) -> tuple[np.ndarray, list[BoxAnnotation]]:
    """One ``(size, size, 3)`` uint8 patch and its box annotations."""
    n = spec.size
    eosin = 0.45 + 0.25 * ndimage.gaussian_filter(rng.standard_normal((n, n)), 2.0, mode="wrap") * 3
    hema = 0.08 + 0.05 * np.abs(ndimage.gaussian_filter(rng.standard_normal((n, n)), 1.0, mode="wrap")) * 3
    blobs = _place_blobs(rng, spec)
    for blob in blobs:
        lo, hi = spec.mitosis_h if blob.label == "mitosis" else spec.negative_h
        m = blob.mask(n)
        hema[m] = rng.uniform(lo, hi) + 0.08 * rng.standard_normal(m.sum())
        eosin[m] *= 0.5
    od = (np.clip(hema, 0, None)[..., None] * HEMATOXYLIN_OD
          + np.clip(eosin, 0.05, None)[..., None] * EOSIN_OD
          + 0.01 * np.abs(rng.standard_normal((n, n, 3))))
    return od_to_rgb(od), [b.box(n) for b in blobs]


def synth(count: int, seed: int, spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write ``count`` patches plus ``manifest.json`` into ``out_dir``."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(count):
        image, boxes = render_patch(rng, spec)
        rel = f"images/synth_{i:04d}.png"
        write_rgb(out / rel, image)
        entries.append(ManifestEntry(rel, boxes))
    manifest = DatasetManifest(entries, (spec.size, spec.size), "synthetic", out,
                               {"synth": {"seed": seed, **spec.to_json()}})
    manifest.save(out / "manifest.json")
    return manifest
