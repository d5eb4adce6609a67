"""Regressed heatmaps to discrete detections.

Per channel: Otsu threshold -> binary median filter -> watershed split on
the distance transform -> one detection per sufficiently large region.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from skimage.segmentation import relabel_sequential, watershed

from .targets import LABELS


class OtsuResult(NamedTuple):
    threshold: float
    mask: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class PostprocessConfig:
    bins: int = 256
    median_window: int = 3
    min_area: int = 20
    min_separation: float = 8.0
    # lower bound applied on top of Otsu so near-empty channels do not yield noise blobs
    threshold_floor: float = 0.25

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    label: str
    area: int
    peak: float

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "Detection":
        return cls(float(d["x"]), float(d["y"]), d["label"], int(d["area"]), float(d["peak"]))


def bin_indices(image: np.ndarray, bins: int) -> np.ndarray:
    """Bin ``t`` covers ``(t/bins, (t+1)/bins]``; values at or below 0 land in bin 0."""
    idx = np.ceil(np.asarray(image, dtype=np.float64) * bins).astype(np.int64) - 1
    return np.clip(idx, 0, bins - 1)


def otsu_threshold(channel, bins: int = 256) -> OtsuResult:
    """Otsu's threshold over ``bins`` equal bins on [0, 1].

    The mask is ``channel > threshold``; ties in between-class variance go to
    the lowest boundary. A histogram with a single occupied bin has no
    separating threshold and returns an all-zero mask flagged degenerate.
    """
    img = np.asarray(channel, dtype=np.float64)
    if img.size == 0:
        raise ValueError("otsu_threshold needs a nonempty image")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    idx = bin_indices(img, bins)
    hist = np.bincount(idx.ravel(), minlength=bins).astype(np.float64)
    p = hist / hist.sum()
    centers = (np.arange(bins) + 0.5) / bins
    w0 = np.cumsum(p)[:-1]
    mu = np.cumsum(p * centers)[:-1]
    mu_total = float((p * centers).sum())
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * w0 - mu) ** 2 / (w0 * w1)
    valid = (w0 > 0) & (w1 > 0)
    # w1 is computed as 1 - w0 and can be a rounding residue when the top bins are empty
    valid &= hist[::-1].cumsum()[::-1][1:] > 0
    if not valid.any():
        return OtsuResult(float(img.max()), np.zeros(img.shape, dtype=np.uint8), True)
    between = np.where(valid, between, -np.inf)
    t = int(np.argmax(between))
    mask = (idx > t).astype(np.uint8)
    return OtsuResult((t + 1) / bins, mask, False)


def median_filter(mask, window: int = 3) -> np.ndarray:
    """Binary median (majority vote) with replicated borders."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"median window must be odd and >= 3, got {window}")
    m = (np.asarray(mask) > 0).astype(np.uint8)
    return ndimage.median_filter(m, size=window, mode="nearest")


def _markers(dist: np.ndarray, components: np.ndarray, min_separation: float) -> np.ndarray:
    # plateaus of local maxima count once
    local_max = (ndimage.maximum_filter(dist, size=3, mode="constant") == dist) & (dist > 0)
    plateaus, n = ndimage.label(local_max, structure=np.ones((3, 3)))
    candidates = []
    for sl_id in range(1, n + 1):
        rr, cc = np.nonzero(plateaus == sl_id)
        k = np.argmin((rr - rr.mean()) ** 2 + (cc - cc.mean()) ** 2)
        candidates.append((-dist[rr[k], cc[k]], rr[k], cc[k]))
    candidates.sort()
    kept: list[tuple[int, int]] = []
    for _, r, c in candidates:
        if all((r - kr) ** 2 + (c - kc) ** 2 >= min_separation**2 for kr, kc in kept):
            kept.append((r, c))
    markers = np.zeros(dist.shape, dtype=np.int64)
    for i, (r, c) in enumerate(kept, start=1):
        markers[r, c] = i
    # any component left without a marker gets one at its deepest point
    next_id = len(kept) + 1
    for comp_id, sl in enumerate(ndimage.find_objects(components), start=1):
        if sl is None:
            continue
        region = components[sl] == comp_id
        if np.any(markers[sl][region]):
            continue
        local = np.where(region, dist[sl], -1)
        r, c = np.unravel_index(np.argmax(local), local.shape)
        markers[sl][r, c] = next_id
        next_id += 1
    return markers


def watershed_split(mask, min_separation: float = 8.0) -> np.ndarray:
    """Split touching blobs; returns a label map with ids 1..N and 0 for background."""
    m = np.asarray(mask) > 0
    if not m.any():
        return np.zeros(m.shape, dtype=np.int64)
    dist = ndimage.distance_transform_edt(m)
    components, _ = ndimage.label(m)
    markers = _markers(dist, components, min_separation)
    labels = watershed(-dist, markers, mask=m, connectivity=1)
    labels, _, _ = relabel_sequential(labels)
    return labels.astype(np.int64)


def extract_detections(labels, source_channel, label_kind: str, min_area: int = 20) -> list[Detection]:
    labels = np.asarray(labels)
    src = np.asarray(source_channel, dtype=np.float64)
    if labels.shape != src.shape:
        raise ValueError(f"label map {labels.shape} and source channel {src.shape} differ in shape")
    out = []
    n = int(labels.max()) if labels.size else 0
    for region_id, sl in enumerate(ndimage.find_objects(labels, max_label=n), start=1):
        if sl is None:
            continue
        region = labels[sl] == region_id
        area = int(region.sum())
        if area < min_area:
            continue
        rr, cc = np.nonzero(region)
        out.append(Detection(
            x=float(cc.mean() + sl[1].start),
            y=float(rr.mean() + sl[0].start),
            label=label_kind,
            area=area,
            peak=float(src[sl][region].max()),
        ))
    return out


def detect_channel(channel, label_kind: str, config: PostprocessConfig = PostprocessConfig()) -> list[Detection]:
    img = np.clip(np.asarray(channel, dtype=np.float64), 0.0, 1.0)
    res = otsu_threshold(img, config.bins)
    mask = res.mask
    if config.threshold_floor > 0 and res.threshold < config.threshold_floor:
        mask = (img > config.threshold_floor).astype(np.uint8)
    mask = median_filter(mask, config.median_window)
    labels = watershed_split(mask, config.min_separation)
    return extract_detections(labels, img, label_kind, config.min_area)


def detect(prediction, config: PostprocessConfig = PostprocessConfig()) -> dict[str, list[Detection]]:
    """Detections for each channel of a ``(2, H, W)`` prediction, keyed by label."""
    pred = np.asarray(prediction)
    if pred.ndim != 3 or pred.shape[0] != len(LABELS):
        raise ValueError(f"prediction must be ({len(LABELS)}, H, W), got {pred.shape}")
    return {label: detect_channel(pred[i], label, config) for i, label in enumerate(LABELS)}
