"""
The whole pipeline on synthetic patches
=======================================

Synthetic patches -> split -> train -> infer, through the Python API. The
same steps are available from the command line:

    uvmitosis synth --count 64 --sigma 3 --out data
    uvmitosis make-targets --manifest data/manifest.json --sigma 3
    uvmitosis train --manifest data/manifest.json --depth 2 --base-f 8 --lr 1e-3 --epochs 80 --out train
    uvmitosis infer --manifest data/manifest.json --checkpoint train/checkpoint.json \\
        --radius 8 --min-area 10 --min-separation 3 --out infer

This script uses fewer patches and epochs so that it finishes in under a
minute; expect a weaker score than the full run.
"""

import tempfile
from pathlib import Path

from uvmitosis.postprocess import PostprocessConfig
from uvmitosis.tensor import AdamConfig
from uvmitosis.uvnet import UVNetConfig
from uvmitosis.pipeline.data import SplitSpec, split
from uvmitosis.pipeline.inference import render_report
from uvmitosis.pipeline.inference import infer
from uvmitosis.pipeline.synth import SynthSpec, synth
from uvmitosis.pipeline.training import TrainConfig, train

out = Path(tempfile.mkdtemp(prefix="uvmitosis-demo-"))
manifest = synth(24, seed=0, spec=SynthSpec(sigma=3.0), out_dir=out / "data")
train_set, val_set, test_set = split(manifest, SplitSpec(0.6, 0.2, 0.2, seed=0))
print("split sizes:", len(train_set), len(val_set), len(test_set))

result = train(train_set, val_set, UVNetConfig(base_f=8, depth=2),
               TrainConfig(epochs=15, adam=AdamConfig(1e-3), sigma=3.0), out / "train")
for row in result.history[::5]:
    print(f"epoch {row['epoch']:2d} train {row['train_loss']:.5f} val {row['val_loss']:.5f}")

report = infer(test_set, result.best_weights, PostprocessConfig(min_area=10, min_separation=3.0),
               radius=8, out_dir=out / "infer")
print(render_report(report.metrics))
print("outputs in", out)
