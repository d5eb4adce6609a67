"""Heatmap-regression training loop for UV-Net."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..targets import GaussianSpec, centroids_from_boxes, render_heatmap
from ..tensor import AdamConfig, HuberConfig, adam_step, huber_loss
from ..uvnet import ModelWeights, UVNetConfig, build_uvnet, save_checkpoint, uvnet_forward
from .augment import AugmentConfig, augment
from .data import DatasetManifest, image_to_input, read_rgb

log = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4
    adam: AdamConfig = field(default_factory=AdamConfig)
    huber: HuberConfig = field(default_factory=HuberConfig)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    sigma: float = 8.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    weights: ModelWeights
    best_weights: ModelWeights
    history: list[dict]
    best_epoch: int


def load_arrays(manifest: DatasetManifest, sigma: float, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Stack network inputs ``(N, 3, H, W)`` and heatmap targets ``(N, 2, H, W)``.

    Targets come from each entry's ``target_path`` when present and are
    rendered from the boxes otherwise.
    """
    xs, ys = [], []
    for e in manifest.entries:
        img = read_rgb(manifest.resolve(e.image_path))
        xs.append(image_to_input(img, dtype))
        if e.target_path is not None:
            t = np.load(manifest.resolve(e.target_path))
        else:
            t = render_heatmap(centroids_from_boxes(e.boxes), GaussianSpec(sigma), *img.shape[:2])
        ys.append(t.astype(dtype))
    if not xs:
        return np.zeros((0, 3, 0, 0), dtype), np.zeros((0, 2, 0, 0), dtype)
    return np.stack(xs), np.stack(ys)


def evaluate_loss(weights: ModelWeights, x: np.ndarray, y: np.ndarray, huber: HuberConfig, batch_size: int) -> float:
    total = 0.0
    for s in range(0, len(x), batch_size):
        pred = uvnet_forward(x[s:s + batch_size], weights)
        total += float(huber_loss(pred, y[s:s + batch_size], huber).data) * len(pred.data)
    return total / len(x)


def _snapshot(weights: ModelWeights) -> ModelWeights:
    return weights.astype(np.float64)


def train(
    train_set: DatasetManifest,
    val_set: DatasetManifest | None,
    model_config: UVNetConfig,
    config: TrainConfig,
    out_dir=None,
) -> TrainResult:
    """Train from scratch; keeps the weights with the best validation loss.

    With an empty validation set the training loss drives checkpoint
    selection. When ``out_dir`` is given, ``checkpoint.json`` (best),
    ``last.json``, ``history.csv`` and ``train_config.json`` are written.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    dtype = DTYPES[config.dtype]
    x_tr, y_tr = load_arrays(train_set, config.sigma, dtype)
    x_va, y_va = load_arrays(val_set, config.sigma, dtype) if val_set is not None and len(val_set) else (None, None)
    weights = build_uvnet(model_config).astype(dtype)
    params = weights.parameters()
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    best = math.inf
    best_epoch = 0
    best_weights = _snapshot(weights)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_config.json").write_text(json.dumps(
            {"model": model_config.to_json(), "train": config.to_json()}, indent=1))

    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x_tr))
        running = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            xb, yb = [], []
            for i in idx:
                xi, yi, _ = augment(x_tr[i], y_tr[i], config.augmentation, rng)
                xb.append(xi)
                yb.append(yi)
            xb, yb = np.stack(xb).astype(dtype), np.stack(yb).astype(dtype)
            loss = huber_loss(uvnet_forward(xb, weights), yb, config.huber)
            value = float(loss.data)
            step += 1
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}, step {step}")
            loss.backward()
            adam_step(params, config.adam)
            running += value * len(idx)
        train_loss = running / len(x_tr)
        val_loss = evaluate_loss(weights, x_va, y_va, config.huber, config.batch_size) if x_va is not None else None
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        score = val_loss if val_loss is not None else train_loss
        if score < best:
            best, best_epoch = score, epoch
            best_weights = _snapshot(weights)
            if out is not None:
                save_checkpoint(best_weights, out / "checkpoint.json",
                                {"epoch": epoch, "val_loss": val_loss, "train_loss": train_loss,
                                 "sigma": config.sigma})
        log.info("epoch %d train %.6f val %s", epoch, train_loss, "-" if val_loss is None else f"{val_loss:.6f}")

    if out is not None:
        save_checkpoint(_snapshot(weights), out / "last.json",
                        {"epoch": config.epochs, "sigma": config.sigma})
        write_history(history, out / "history.csv")
    return TrainResult(weights, best_weights, history, best_epoch)


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss"])
        w.writeheader()
        for row in history:
            w.writerow({k: ("" if v is None else repr(v)) for k, v in row.items()})
