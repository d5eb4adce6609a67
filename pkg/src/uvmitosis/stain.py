"""Macenko H&E stain estimation and normalisation.

Images are ``(H, W, 3)`` uint8 RGB arrays; optical-density images are
``(H, W, 3)`` float arrays. Stain matrices are ``(3, 2)`` with unit-norm,
nonnegative columns. Column 0 ("hematoxylin" in the API) is always the
vector with the larger blue-channel OD component; source estimates and
targets follow the same rule, so normalisation maps like to like.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

EPS_INTENSITY = 1.0


class DegenerateStainError(ValueError):
    """The optical-density scatter cannot support a two-stain estimate."""


@dataclass(frozen=True)
class StainParams:
    alpha: float = 1.0
    beta: float = 0.15
    i0: float = 255.0
    max_percentile: float = 99.0
    degeneracy_tol: float = 1e-4

    def __post_init__(self):
        if not 0 < self.alpha < 50:
            raise ValueError(f"alpha must lie in (0, 50), got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.i0 > 0:
            raise ValueError(f"i0 must be > 0, got {self.i0}")


DEFAULT_PARAMS = StainParams()


def rgb_to_od(image, params: StainParams = DEFAULT_PARAMS) -> np.ndarray:
    """Optical density ``-log10((I + 1) / I0)``, floored at zero."""
    img = np.asarray(image, dtype=np.float64)
    od = -np.log10((img + EPS_INTENSITY) / params.i0)
    return np.maximum(od, 0.0)


def od_to_rgb(od, params: StainParams = DEFAULT_PARAMS) -> np.ndarray:
    """Inverse of :func:`rgb_to_od`, clamped and rounded to uint8."""
    od = np.asarray(od, dtype=np.float64)
    img = params.i0 * np.power(10.0, -od) - EPS_INTENSITY
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def _order_h_first(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    # hematoxylin carries the larger blue-channel OD component
    if v1[2] >= v2[2]:
        return np.stack([v1, v2], axis=1)
    return np.stack([v2, v1], axis=1)


def _unit_nonneg(v: np.ndarray) -> np.ndarray:
    if v.sum() < 0:
        v = -v
    v = np.clip(v, 0.0, None)
    n = np.linalg.norm(v)
    if n == 0:
        raise DegenerateStainError("stain direction collapsed to zero")
    return v / n


def estimate_stain_matrix(od, params: StainParams = DEFAULT_PARAMS) -> np.ndarray:
    """Estimate the (3, 2) H&E stain matrix from an OD image or (N, 3) OD list."""
    pixels = np.asarray(od, dtype=np.float64).reshape(-1, 3)
    tissue = pixels[np.all(pixels > params.beta, axis=1)]
    if len(tissue) < 2:
        raise DegenerateStainError(
            f"only {len(tissue)} tissue pixels have all OD components above beta={params.beta}"
        )
    # eigh returns ascending eigenvalues
    evals, evecs = np.linalg.eigh(np.cov(tissue.T))
    scale = max(evals[2], np.finfo(float).tiny)
    if evals[1] <= params.degeneracy_tol * scale or (evals[1] - evals[0]) <= params.degeneracy_tol * scale:
        raise DegenerateStainError(
            f"OD scatter has rank < 2 or an ambiguous principal plane (eigenvalues {evals.tolist()})"
        )
    plane = evecs[:, [2, 1]]
    if plane[:, 0].sum() < 0:
        plane[:, 0] *= -1
    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [params.alpha, 100 - params.alpha])
    v_lo = _unit_nonneg(plane @ np.array([np.cos(lo), np.sin(lo)]))
    v_hi = _unit_nonneg(plane @ np.array([np.cos(hi), np.sin(hi)]))
    return _order_h_first(v_lo, v_hi)


def compute_concentrations(od, stain: np.ndarray) -> np.ndarray:
    """Per-pixel nonnegative least-squares-style concentrations, shape ``od.shape[:-1] + (2,)``."""
    stain = np.asarray(stain, dtype=np.float64)
    if stain.shape != (3, 2):
        raise ValueError(f"stain matrix must be 3x2, got {stain.shape}")
    sv = np.linalg.svd(stain, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
        raise ValueError(f"stain matrix is singular (singular values {sv.tolist()})")
    od = np.asarray(od, dtype=np.float64)
    flat = od.reshape(-1, 3)
    conc = np.linalg.lstsq(stain, flat.T, rcond=None)[0].T
    return np.maximum(conc, 0.0).reshape(od.shape[:-1] + (2,))


def max_concentrations(conc: np.ndarray, params: StainParams = DEFAULT_PARAMS) -> np.ndarray:
    return np.percentile(conc.reshape(-1, 2), params.max_percentile, axis=0)


def normalize_to_target(
    image,
    target_stain: np.ndarray,
    target_max_concentrations,
    params: StainParams = DEFAULT_PARAMS,
) -> np.ndarray:
    """Re-express an RGB image in the target stain basis and concentration scale."""
    img = np.asarray(image)
    od = rgb_to_od(img, params)
    source = estimate_stain_matrix(od, params)
    conc = compute_concentrations(od, source)
    src_max = max_concentrations(conc, params)
    if np.any(src_max <= 0):
        raise DegenerateStainError(f"source {params.max_percentile}th-percentile concentrations are {src_max}")
    conc = conc * (np.asarray(target_max_concentrations, dtype=np.float64) / src_max)
    out_od = conc @ np.asarray(target_stain, dtype=np.float64).T
    return od_to_rgb(out_od, params)


def stain_target_from_image(image, params: StainParams = DEFAULT_PARAMS) -> tuple[np.ndarray, np.ndarray]:
    """Designate an image as the normalisation target: its stain matrix and robust max concentrations."""
    od = rgb_to_od(image, params)
    stain = estimate_stain_matrix(od, params)
    return stain, max_concentrations(compute_concentrations(od, stain), params)


# ---------------------------------------------------------------------------
# reference target

# the standard Macenko reference vectors, columns in larger-blue-first order
REFERENCE_MAX_CONCENTRATIONS = np.array([1.0308, 1.9705])


def stain_matrix_to_json(stain: np.ndarray) -> list[float]:
    """Column-major 6-number list."""
    return np.asarray(stain, dtype=np.float64).T.ravel().tolist()


def stain_matrix_from_json(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (6,):
        raise ValueError(f"stain matrix JSON must hold 6 numbers, got shape {arr.shape}")
    stain = arr.reshape(2, 3).T
    return stain / np.linalg.norm(stain, axis=0, keepdims=True)


def load_stain_matrix(path=None) -> np.ndarray:
    """Load a stain matrix JSON file; with no path, the bundled reference."""
    if path is None:
        text = resources.files("uvmitosis").joinpath("reference_stain.json").read_text()
    else:
        text = Path(path).read_text()
    return stain_matrix_from_json(json.loads(text))


def save_stain_matrix(stain: np.ndarray, path) -> None:
    Path(path).write_text(json.dumps(stain_matrix_to_json(stain)))
