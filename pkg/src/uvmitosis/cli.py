"""Command-line entry point: ``uvmitosis <subcommand> ...``.

Every subcommand accepts ``--config FILE.json`` whose keys are flag names
(dashes or underscores); explicit flags win over the file. Output
directories default to ``$UVMITOSIS_OUTPUT_DIR/<subcommand>`` when that
variable is set. Failures exit nonzero after printing one JSON line
``{"error": ..., "type": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .evaluation import MetricsReport
from .postprocess import PostprocessConfig
from .stain import (
    REFERENCE_MAX_CONCENTRATIONS,
    DegenerateStainError,
    StainParams,
    load_stain_matrix,
    normalize_to_target,
    stain_target_from_image,
)
from .targets import GaussianSpec, centroids_from_boxes, render_heatmap
from .tensor import AdamConfig, HuberConfig
from .uvnet import UVNetConfig, load_checkpoint
from .pipeline.augment import AugmentConfig
from .pipeline.data import SplitSpec, ingest, read_rgb, split_indices, write_rgb
from .pipeline.inference import (
    detections_from_json,
    infer,
    render_report,
    score,
    write_metrics,
    write_per_image_csv,
)
from .pipeline.synth import SynthSpec, synth
from .pipeline.training import TrainConfig, train

log = logging.getLogger("uvmitosis")

ENV_OUTPUT = "UVMITOSIS_OUTPUT_DIR"


def _default_out(name: str) -> str:
    base = os.environ.get(ENV_OUTPUT)
    return str(Path(base) / name) if base else f"runs/{name}"


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(a) -> dict:
    spec = SynthSpec(size=a.size, sigma=a.sigma, max_mitoses=a.max_mitoses, max_negatives=a.max_negatives)
    m = synth(a.count, a.seed, spec, a.out)
    return {"manifest": str(Path(a.out) / "manifest.json"), "images": len(m)}


def cmd_stain_normalize(a) -> dict:
    params = StainParams(alpha=a.alpha, beta=a.beta, i0=a.i0)
    m = ingest(a.manifest)
    if a.target_image:
        stain, max_c = stain_target_from_image(read_rgb(a.target_image), params)
    else:
        stain, max_c = load_stain_matrix(a.stain_matrix), REFERENCE_MAX_CONCENTRATIONS
    out = Path(a.out)
    skipped = []
    for i, e in enumerate(m.entries):
        src = m.resolve(e.image_path)
        rel = Path(e.image_path) if not Path(e.image_path).is_absolute() else Path("images") / src.name
        dst = out / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        img = read_rgb(src)
        try:
            img = normalize_to_target(img, stain, max_c, params)
        except DegenerateStainError as exc:
            if a.strict:
                raise DegenerateStainError(f"entry {i} ({e.image_path}): {exc}") from None
            log.warning("entry %d (%s) left unnormalised: %s", i, e.image_path, exc)
            skipped.append(e.image_path)
        write_rgb(dst.with_suffix(".png"), img)
        e.image_path = str(rel.with_suffix(".png"))
        e.target_path = None
    m.root = out
    m.extra["stain_normalized"] = {"stain_matrix": stain.T.ravel().tolist(), "max_concentrations": list(map(float, max_c))}
    m.save(out / "manifest.json")
    return {"manifest": str(out / "manifest.json"), "images": len(m), "skipped": skipped}


def cmd_make_targets(a) -> dict:
    m = ingest(a.manifest)
    spec = GaussianSpec(a.sigma, a.truncation_radius)
    tdir = m.root / "targets"
    tdir.mkdir(exist_ok=True)
    for e in m.entries:
        h, w = m.patch_size if m.patch_size else read_rgb(m.resolve(e.image_path)).shape[:2]
        heat = render_heatmap(centroids_from_boxes(e.boxes), spec, h, w)
        rel = f"targets/{Path(e.image_path).stem}.npy"
        np.save(m.root / rel, heat.astype(np.float32))
        e.target_path = rel
    m.extra["targets"] = {"sigma": spec.sigma, "truncation_radius": spec.truncation_radius}
    m.save(a.manifest)
    return {"manifest": str(a.manifest), "targets": len(m), "sigma": spec.sigma}


def cmd_train(a) -> dict:
    m = ingest(a.manifest)
    spec = SplitSpec(a.split_train, a.split_val, a.split_test, a.split_seed)
    tr, va, te = split_indices(len(m), spec)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.json").write_text(json.dumps({
        "manifest": str(Path(a.manifest).resolve()), "spec": asdict(spec),
        "train": tr, "val": va, "test": te}))
    sigma = a.sigma if a.sigma is not None else m.extra.get("targets", {}).get("sigma", 8.0)
    model = UVNetConfig(in_channels=3, out_channels=2, base_f=a.base_f, depth=a.depth, seed=a.seed)
    cfg = TrainConfig(
        epochs=a.epochs,
        batch_size=a.batch_size,
        adam=AdamConfig(a.lr, a.beta1, a.beta2, a.epsilon),
        huber=HuberConfig(a.huber_delta),
        augmentation=AugmentConfig(a.hflip, a.vflip, (a.scale_lo, a.scale_hi)),
        sigma=sigma,
        seed=a.seed,
        dtype=a.dtype,
    )
    res = train(m.subset(tr), m.subset(va), model, cfg, out)
    last = res.history[-1]
    return {"checkpoint": str(out / "checkpoint.json"), "best_epoch": res.best_epoch,
            "final_train_loss": last["train_loss"], "final_val_loss": last["val_loss"],
            "initial_train_loss": res.history[0]["train_loss"]}


def _select(m, subset: str, split_file):
    if subset == "all":
        return m
    if split_file is None or not Path(split_file).is_file():
        raise FileNotFoundError(f"--subset {subset} needs a split file (not found: {split_file})")
    idx = json.loads(Path(split_file).read_text())[subset]
    return m.subset(idx)


def _post_config(a) -> PostprocessConfig:
    return PostprocessConfig(bins=a.bins, median_window=a.median_window, min_area=a.min_area,
                             min_separation=a.min_separation, threshold_floor=a.threshold_floor)


def cmd_infer(a) -> dict:
    weights, extra = load_checkpoint(a.checkpoint)
    m = _select(ingest(a.manifest), a.subset,
                a.split_file or Path(a.checkpoint).parent / "split.json")
    res = infer(m, weights, _post_config(a), a.radius, a.matching, out_dir=a.out)
    head = res.metrics["mitosis"]["micro"]
    return {"out": a.out, "images": len(m), "precision": head["precision"], "recall": head["recall"],
            "f1": head["f1"]}


def cmd_evaluate(a) -> dict:
    m = _select(ingest(a.manifest), a.subset, a.split_file)
    dets = detections_from_json(json.loads(Path(a.detections).read_text()), m)
    matches, metrics = score(m, dets, a.radius, a.matching)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(metrics, out)
    write_per_image_csv(m, matches["mitosis"], out / "per_image.csv")
    head = metrics["mitosis"]["micro"]
    return {"out": str(out), "precision": head["precision"], "recall": head["recall"], "f1": head["f1"]}


def cmd_report(a) -> dict:
    metrics = json.loads(Path(a.metrics).read_text())
    for label in ("mitosis", "hard_negative"):
        if label in metrics:
            m = metrics[label]["micro"]
            # reject reports whose stored ratios disagree with their counts
            ref = MetricsReport(m["tp"], m["fp"], m["fn"])
            for key in ("precision", "recall", "f1"):
                if abs(getattr(ref, key) - m[key]) > 1e-9:
                    raise ValueError(f"{a.metrics}: {label} {key}={m[key]} inconsistent with counts ({getattr(ref, key)})")
    text = render_report(metrics)
    if a.out:
        Path(a.out).write_text(text + "\n")
    print(text, file=sys.stderr)
    return {"report": a.out or "-"}


# ---------------------------------------------------------------------------
# parser


def _bool_flag(p, name: str, default: bool, help: str) -> None:
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                   default=default, help=help)


def _post_flags(p) -> None:
    d = PostprocessConfig()
    p.add_argument("--radius", type=float, default=30.0, help="match radius in px")
    p.add_argument("--matching", choices=["greedy", "optimal"], default="greedy")
    p.add_argument("--bins", type=int, default=d.bins)
    p.add_argument("--median-window", type=int, default=d.median_window)
    p.add_argument("--min-area", type=int, default=d.min_area)
    p.add_argument("--min-separation", type=float, default=d.min_separation)
    p.add_argument("--threshold-floor", type=float, default=d.threshold_floor)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uvmitosis", description="UV-Net mitosis detection pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of flag defaults")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic patch dataset")
    s = SynthSpec()
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=s.size)
    p.add_argument("--sigma", type=float, default=s.sigma, help="minimum blob separation is 2*sigma")
    p.add_argument("--max-mitoses", type=int, default=s.max_mitoses)
    p.add_argument("--max-negatives", type=int, default=s.max_negatives)
    p.add_argument("--out", default=None)

    p = add("stain-normalize", cmd_stain_normalize, "write a Macenko-normalised copy of a dataset")
    sp = StainParams()
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--target-image", help="estimate the target stain basis from this image")
    p.add_argument("--stain-matrix", help="6-number column-major JSON stain matrix (default: bundled reference)")
    p.add_argument("--alpha", type=float, default=sp.alpha)
    p.add_argument("--beta", type=float, default=sp.beta)
    p.add_argument("--i0", type=float, default=sp.i0)
    _bool_flag(p, "strict", False, "fail on images whose stains cannot be estimated")

    p = add("make-targets", cmd_make_targets, "render Gaussian heatmap targets next to the manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sigma", type=float, default=8.0)
    p.add_argument("--truncation-radius", type=float, default=None)

    p = add("train", cmd_train, "train UV-Net on the train split")
    t = TrainConfig()
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=t.epochs)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--lr", type=float, default=t.adam.learning_rate)
    p.add_argument("--beta1", type=float, default=t.adam.beta1)
    p.add_argument("--beta2", type=float, default=t.adam.beta2)
    p.add_argument("--epsilon", type=float, default=t.adam.epsilon)
    p.add_argument("--huber-delta", type=float, default=t.huber.delta)
    _bool_flag(p, "hflip", True, "random horizontal flips")
    _bool_flag(p, "vflip", True, "random vertical flips")
    p.add_argument("--scale-lo", type=float, default=t.augmentation.scale_range[0])
    p.add_argument("--scale-hi", type=float, default=t.augmentation.scale_range[1])
    p.add_argument("--sigma", type=float, default=None, help="target sigma when targets are rendered on the fly")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["float32", "float64"], default=t.dtype)
    p.add_argument("--base-f", type=int, default=16)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--split-train", type=float, default=0.6)
    p.add_argument("--split-val", type=float, default=0.2)
    p.add_argument("--split-test", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)

    p = add("infer", cmd_infer, "predict, post-process and score a dataset subset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--subset", choices=["all", "train", "val", "test"], default="test")
    p.add_argument("--split-file", default=None, help="default: split.json next to the checkpoint")
    _post_flags(p)

    p = add("evaluate", cmd_evaluate, "score a detections JSON file against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--subset", choices=["all", "train", "val", "test"], default="all")
    p.add_argument("--split-file", default=None)
    p.add_argument("--radius", type=float, default=30.0)
    p.add_argument("--matching", choices=["greedy", "optimal"], default="greedy")

    p = add("report", cmd_report, "render a metrics JSON file as a text table")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", default=None)
    return parser


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        defaults = {}
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest not in known:
                raise ValueError(f"{args.config}: unknown option {key!r} for {args.command}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if hasattr(args, "out") and args.out is None and args.command != "report":
        args.out = _default_out(args.command)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _emit(args.func(args))
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable line
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
