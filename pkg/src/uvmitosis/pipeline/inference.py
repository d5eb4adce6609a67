"""Forward pass, post-processing and scoring over a dataset."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..evaluation import (
    MatchResult,
    check_report,
    compute_macro_metrics,
    compute_metrics,
    format_table,
    match_detections,
)
from ..postprocess import Detection, PostprocessConfig, detect
from ..targets import LABELS
from ..uvnet import ModelWeights, uvnet_forward
from .data import DatasetManifest, image_to_input, read_rgb

HEADLINE = "mitosis"


@dataclass
class InferenceResult:
    predictions: np.ndarray
    detections: list[dict[str, list[Detection]]]
    matches: dict[str, list[MatchResult]]
    metrics: dict


def predict(weights: ModelWeights, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
    """Network output for an ``(N, 3, H, W)`` input stack."""
    dtype = weights.parameters()[0].dtype
    outs = [uvnet_forward(images[s:s + batch_size].astype(dtype), weights).data
            for s in range(0, len(images), batch_size)]
    return np.concatenate(outs).astype(np.float64)


def score(manifest: DatasetManifest, detections: list[dict[str, list[Detection]]], radius: float,
          method: str = "greedy") -> tuple[dict[str, list[MatchResult]], dict]:
    """Match per-image detections to the manifest's boxes, per label."""
    if len(detections) != len(manifest):
        raise ValueError(f"{len(detections)} detection sets for {len(manifest)} images")
    matches: dict[str, list[MatchResult]] = {label: [] for label in LABELS}
    metrics: dict = {"radius": radius, "matching": method, "headline": HEADLINE, "images": len(manifest)}
    for label in LABELS:
        n_pred = n_truth = 0
        for entry, dets in zip(manifest.entries, detections):
            preds = [(d.x, d.y) for d in dets.get(label, [])]
            truths = entry.centroids(label)
            n_pred += len(preds)
            n_truth += len(truths)
            matches[label].append(match_detections(preds, truths, radius, method))
        micro = compute_metrics(matches[label])
        check_report(micro, n_pred, n_truth)
        metrics[label] = {"micro": micro.to_json(), "macro": compute_macro_metrics(matches[label])}
    return matches, metrics


def infer(
    test_set: DatasetManifest,
    weights: ModelWeights,
    post: PostprocessConfig = PostprocessConfig(),
    radius: float = 30.0,
    method: str = "greedy",
    batch_size: int = 4,
    out_dir=None,
) -> InferenceResult:
    if test_set.patch_size is not None:
        h, w = test_set.patch_size
        div = 2**weights.config.depth
        if h % div or w % div:
            raise ValueError(
                f"checkpoint depth {weights.config.depth} needs patch sides divisible by {div}, "
                f"dataset patches are {h}x{w}"
            )
    images = [read_rgb(test_set.resolve(e.image_path)) for e in test_set.entries]
    x = np.stack([image_to_input(im) for im in images]) if images else np.zeros((0, 3, 1, 1), np.float32)
    if x.shape[1] != weights.config.in_channels:
        raise ValueError(f"checkpoint expects {weights.config.in_channels} input channels, images have {x.shape[1]}")
    preds = predict(weights, x, batch_size) if len(x) else np.zeros((0, len(LABELS), 1, 1))
    detections = [detect(p, post) for p in preds]
    matches, metrics = score(test_set, detections, radius, method)
    metrics["postprocess"] = post.to_json()
    result = InferenceResult(preds, detections, matches, metrics)
    if out_dir is not None:
        write_outputs(result, test_set, images, Path(out_dir))
    return result


def detections_to_json(test_set: DatasetManifest, detections) -> dict:
    return {
        e.image_path: [d.to_json() for label in LABELS for d in dets.get(label, [])]
        for e, dets in zip(test_set.entries, detections)
    }


def detections_from_json(doc: dict, manifest: DatasetManifest) -> list[dict[str, list[Detection]]]:
    out = []
    for e in manifest.entries:
        if e.image_path not in doc:
            raise ValueError(f"detections file has no entry for {e.image_path}")
        by_label: dict[str, list[Detection]] = {label: [] for label in LABELS}
        for d in doc[e.image_path]:
            det = Detection.from_json(d)
            by_label[det.label].append(det)
        out.append(by_label)
    return out


def write_per_image_csv(test_set: DatasetManifest, matches: list[MatchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "tp", "fp", "fn"])
        for e, m in zip(test_set.entries, matches):
            w.writerow([e.image_path, m.tp, m.fp, m.fn])


def write_metrics(metrics: dict, out: Path) -> None:
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1))
    (out / "metrics.txt").write_text(render_report(metrics) + "\n")


def render_report(metrics: dict) -> str:
    from ..evaluation import MetricsReport

    blocks = []
    for label in LABELS:
        if label not in metrics:
            continue
        m = metrics[label]["micro"]
        micro = MetricsReport(m["tp"], m["fp"], m["fn"])
        title = f"[{label}]" + (" (headline)" if label == metrics.get("headline") else "")
        blocks.append(title + "\n" + format_table(micro, metrics[label].get("macro"), metrics.get("radius")))
    return "\n\n".join(blocks)


def overlay(image: np.ndarray, dets: dict[str, list[Detection]], boxes=()) -> Image.Image:
    im = Image.fromarray(image).convert("RGB")
    draw = ImageDraw.Draw(im)
    for b in boxes:
        draw.rectangle([b.x_min, b.y_min, b.x_max, b.y_max], outline=(255, 255, 0))
    colours = {"mitosis": (0, 255, 0), "hard_negative": (255, 0, 0)}
    for label, items in dets.items():
        for d in items:
            r = 2
            draw.line([d.x - r, d.y, d.x + r, d.y], fill=colours[label])
            draw.line([d.x, d.y - r, d.x, d.y + r], fill=colours[label])
    return im


def write_outputs(result: InferenceResult, test_set: DatasetManifest, images, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "overlays").mkdir(exist_ok=True)
    (out / "predictions").mkdir(exist_ok=True)
    (out / "detections.json").write_text(json.dumps(detections_to_json(test_set, result.detections), indent=1))
    write_per_image_csv(test_set, result.matches[HEADLINE], out / "per_image.csv")
    write_metrics(result.metrics, out)
    for e, img, pred, dets in zip(test_set.entries, images, result.predictions, result.detections):
        stem = Path(e.image_path).stem
        np.save(out / "predictions" / f"{stem}.npy", pred)
        overlay(img, dets, e.boxes).save(out / "overlays" / f"{stem}.png")
