"""Dataset manifests, image I/O and train/val/test splitting.

Manifest JSON (paths relative to the manifest's directory)::

    {
      "version": 1,
      "patch_size": [64, 64],
      "source": "synthetic",
      "entries": [
        {"image_path": "images/p0000.png",
         "boxes": [{"x_min": 3, "y_min": 4, "x_max": 9, "y_max": 10, "label": "mitosis"}],
         "target_path": "targets/p0000.npy"}
      ]
    }

A bare JSON list of entries is accepted as well.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..targets import BoxAnnotation

MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    image_path: str
    boxes: list[BoxAnnotation] = field(default_factory=list)
    target_path: str | None = None

    def to_json(self) -> dict:
        d = {"image_path": self.image_path, "boxes": [b.to_json() for b in self.boxes]}
        if self.target_path is not None:
            d["target_path"] = self.target_path
        return d

    def centroids(self, label: str | None = None) -> list[tuple[float, float]]:
        return [((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2)
                for b in self.boxes if label is None or b.label == label]


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    patch_size: tuple[int, int] | None = None
    source: str = "unknown"
    root: Path = field(default_factory=Path)
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def subset(self, indices) -> "DatasetManifest":
        return replace(self, entries=[self.entries[i] for i in indices])

    def to_json(self) -> dict:
        d = {
            "version": MANIFEST_VERSION,
            "patch_size": list(self.patch_size) if self.patch_size else None,
            "source": self.source,
            "entries": [e.to_json() for e in self.entries],
        }
        d.update(self.extra)
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _parse_entry(i: int, raw, patch_size) -> ManifestEntry:
    if not isinstance(raw, dict) or "image_path" not in raw:
        raise ManifestError(f"entry {i}: expected an object with 'image_path'")
    boxes = []
    for j, b in enumerate(raw.get("boxes", [])):
        try:
            box = BoxAnnotation.from_json(b)
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"entry {i} ({raw['image_path']}), box {j}: {exc}") from None
        if patch_size is not None:
            try:
                box.check_bounds(*patch_size)
            except ValueError as exc:
                raise ManifestError(f"entry {i} ({raw['image_path']}), box {j}: {exc}") from None
        boxes.append(box)
    return ManifestEntry(raw["image_path"], boxes, raw.get("target_path"))


def ingest(manifest_path, check_files: bool = True) -> DatasetManifest:
    """Load and validate a manifest; errors name the offending entry."""
    path = Path(manifest_path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(doc, list):
        doc = {"entries": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ManifestError(f"{path}: expected an 'entries' list")
    patch_size = tuple(doc["patch_size"]) if doc.get("patch_size") else None
    entries = [_parse_entry(i, raw, patch_size) for i, raw in enumerate(doc["entries"])]
    extra = {k: v for k, v in doc.items() if k not in ("version", "patch_size", "source", "entries")}
    manifest = DatasetManifest(entries, patch_size, doc.get("source", "unknown"), path.parent, extra)
    if check_files:
        for i, e in enumerate(entries):
            img_path = manifest.resolve(e.image_path)
            if not img_path.is_file():
                raise ManifestError(f"entry {i}: image not found: {img_path}")
            if patch_size is not None:
                with Image.open(img_path) as im:
                    if (im.height, im.width) != patch_size:
                        raise ManifestError(
                            f"entry {i}: image is {im.height}x{im.width}, manifest patch_size is {patch_size}"
                        )
    return manifest


def coco_to_manifest(coco: dict, category_labels: dict[int, str] | None = None) -> dict:
    """Convert a COCO-style detection dict (``bbox`` = [x, y, w, h]) to manifest JSON."""
    cats = category_labels or {}
    if not cats:
        for c in coco.get("categories", []):
            name = c["name"].lower().replace("-", "_").replace(" ", "_")
            positive = ("mitos" in name or "mitot" in name) and not any(
                w in name for w in ("non", "hard", "neg", "imposter", "look"))
            cats[c["id"]] = "mitosis" if positive else "hard_negative"
    by_image: dict[int, list] = {img["id"]: [] for img in coco["images"]}
    for ann in coco.get("annotations", []):
        x, y, w, h = ann["bbox"]
        by_image[ann["image_id"]].append(
            {"x_min": x, "y_min": y, "x_max": x + w, "y_max": y + h, "label": cats.get(ann["category_id"], "mitosis")}
        )
    sizes = {(img["height"], img["width"]) for img in coco["images"] if "height" in img}
    return {
        "version": MANIFEST_VERSION,
        "patch_size": list(sizes.pop()) if len(sizes) == 1 else None,
        "source": "coco",
        "entries": [{"image_path": img["file_name"], "boxes": by_image[img["id"]]} for img in coco["images"]],
    }


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr):
            raise ValueError(f"split fractions must be >= 0, got {fr}")
        if abs(sum(fr) - 1) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")


def split_indices(n: int, spec: SplitSpec) -> tuple[list[int], list[int], list[int]]:
    """Seeded shuffle then contiguous train/val/test runs.

    Validation and test sizes are floored; every remainder entry goes to train.
    """
    order = np.random.default_rng(spec.seed).permutation(n).tolist()
    n_val = math.floor(n * spec.val + 1e-9)
    n_test = math.floor(n * spec.test + 1e-9)
    n_train = n - n_val - n_test
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(manifest: DatasetManifest, spec: SplitSpec) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    tr, va, te = split_indices(len(manifest), spec)
    return manifest.subset(tr), manifest.subset(va), manifest.subset(te)


# ---------------------------------------------------------------------------
# images


def read_rgb(path) -> np.ndarray:
    """``(H, W, 3)`` uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_rgb(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() not in (".png", ".ppm"):
        raise ValueError(f"unsupported image format {path.suffix!r}; use .png or .ppm")
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def image_to_input(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 ``(H, W, 3)`` to network input ``(3, H, W)`` centred on zero."""
    return (np.asarray(image, dtype=np.float64).transpose(2, 0, 1) / 255.0 - 0.5).astype(dtype)
