"""
The UV-Net architecture
=======================

A U-shaped encoder/decoder whose convolution stages are V-blocks: each of
four stages squeezes the running feature map to ``f`` channels with a 1x1
convolution, grows ``k = f/4`` new channels with a 3x3 convolution and
concatenates them, so a block turns ``f`` channels into ``2f``.
"""

import numpy as np

from uvmitosis.uvnet import UVNetConfig, VBlockConfig, build_uvnet, uvnet_forward

print("V-block channel trace for f=16:", VBlockConfig(16).channel_trace())

# The full-size network (base_f 16, depth 4) and the small one used on 64x64 patches.
for config in (UVNetConfig(), UVNetConfig(base_f=8, depth=2)):
    weights = build_uvnet(config)
    levels = [config.level_f(level) for level in range(config.depth + 1)]
    print(f"depth {config.depth}, base_f {config.base_f}: level widths {levels}, "
          f"{weights.num_parameters():,} parameters")

# Output is a two-channel heatmap with the input's spatial size.
small = build_uvnet(UVNetConfig(base_f=8, depth=2))
out = uvnet_forward(np.random.default_rng(0).standard_normal((2, 3, 64, 64)).astype(np.float32),
                    small.astype(np.float32))
print("output shape:", out.shape)

# Sides must be divisible by 2**depth; the error names the level that fails.
try:
    uvnet_forward(np.zeros((1, 3, 10, 16)), small)
except ValueError as exc:
    print("rejected:", exc)
