"""UV-Net: V-blocks inside a U-Net-style encoder-decoder.

A V-block takes ``f`` channels and runs four stages. Each stage squeezes the
running tensor to ``f`` channels with a 1x1 convolution, grows ``k = f/4``
new channels with a 3x3 convolution, and appends them to the running
tensor, so the block ends at ``f + 4k = 2f`` channels.

The trunk is::

    stem 3x3 (in -> base_f)
    encoder level l:  V-block (f_l -> 2 f_l), skip, maxpool     f_l = base_f * 2**l
    bottleneck:       V-block (f_depth -> 2 f_depth)
    decoder level l:  upsample, concat skip, 1x1 reduce to f_l, V-block
    head 1x1 (2 base_f -> out_channels), linear
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    concat_channels,
    conv2d,
    maxpool2d,
    relu,
    upsample2x,
)

STAGES = 4


@dataclass(frozen=True)
class VBlockConfig:
    f: int
    k: int | None = None
    stages: int = STAGES

    def __post_init__(self):
        if self.f <= 0 or self.f % 4:
            raise ValueError(f"V-block f must be a positive multiple of 4, got {self.f}")
        if self.k is None:
            object.__setattr__(self, "k", self.f // 4)
        if self.k * 4 != self.f:
            raise ValueError(f"V-block needs k = f/4, got f={self.f}, k={self.k}")
        if self.stages != STAGES:
            raise ValueError(f"V-block has exactly {STAGES} stages, got {self.stages}")

    @property
    def out_channels(self) -> int:
        return self.f + self.stages * self.k

    def channel_trace(self) -> list[int]:
        """Running channel count before stage 1 and after each stage."""
        return [self.f + i * self.k for i in range(self.stages + 1)]


@dataclass(frozen=True)
class UVNetConfig:
    in_channels: int = 3
    out_channels: int = 2
    base_f: int = 16
    depth: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.base_f <= 0 or self.base_f % 4:
            raise ValueError(f"base_f must be a positive multiple of 4, got {self.base_f}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("in_channels and out_channels must be >= 1")

    def level_f(self, level: int) -> int:
        return self.base_f * 2**level

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "UVNetConfig":
        return cls(**{k: d[k] for k in ("in_channels", "out_channels", "base_f", "depth", "seed") if k in d})


@dataclass
class ModelWeights:
    """Named parameters of every convolution, in build order."""

    config: UVNetConfig
    params: dict[str, Parameter] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.config, {n: p.astype(dtype) for n, p in self.params.items()})

    def forward(self, x) -> Tensor:
        return uvnet_forward(x, self)


# ---------------------------------------------------------------------------
# construction


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}

    def conv(self, name: str, out_ch: int, in_ch: int, k: int) -> None:
        for suffix in ("weight", "bias"):
            if f"{name}.{suffix}" in self.params:
                raise ValueError(f"duplicate parameter name {name}.{suffix}")
        self.params[f"{name}.weight"] = Parameter(_he_uniform(self.rng, (out_ch, in_ch, k, k)), f"{name}.weight")
        self.params[f"{name}.bias"] = Parameter(np.zeros(out_ch), f"{name}.bias")

    def vblock(self, prefix: str, cfg: VBlockConfig) -> None:
        for i, width in enumerate(cfg.channel_trace()[:-1]):
            self.conv(f"{prefix}.s{i}.squeeze", cfg.f, width, 1)
            self.conv(f"{prefix}.s{i}.grow", cfg.k, cfg.f, 3)


def build_uvnet(config: UVNetConfig, seed: int | None = None) -> ModelWeights:
    """Initialise every convolution with seeded He-uniform weights and zero biases."""
    b = _Builder(config.seed if seed is None else seed)
    bf = config.base_f
    b.conv("stem", bf, config.in_channels, 3)
    for level in range(config.depth):
        b.vblock(f"enc{level}", VBlockConfig(config.level_f(level)))
    b.vblock("mid", VBlockConfig(config.level_f(config.depth)))
    incoming = 2 * config.level_f(config.depth)
    for level in reversed(range(config.depth)):
        f = config.level_f(level)
        skip = 2 * f
        b.conv(f"dec{level}.reduce", f, incoming + skip, 1)
        b.vblock(f"dec{level}", VBlockConfig(f))
        incoming = 2 * f
    assert incoming == 2 * bf
    b.conv("head", config.out_channels, incoming, 1)
    if seed is not None and seed != config.seed:
        config = UVNetConfig(config.in_channels, config.out_channels, config.base_f, config.depth, seed)
    return ModelWeights(config, b.params)


# ---------------------------------------------------------------------------
# forward


def _conv(x: Tensor, weights: ModelWeights, name: str, padding: int = 0) -> Tensor:
    return conv2d(x, weights[f"{name}.weight"], weights[f"{name}.bias"], padding=padding)


def vblock_forward(x: Tensor, config: VBlockConfig, weights: ModelWeights, prefix: str) -> Tensor:
    """Run one V-block; input must carry exactly ``config.f`` channels."""
    if x.shape[1] != config.f:
        raise ValueError(f"V-block {prefix!r} expects {config.f} input channels, got {x.shape[1]}")
    running = x
    for i in range(config.stages):
        h = relu(_conv(running, weights, f"{prefix}.s{i}.squeeze"))
        h = relu(_conv(h, weights, f"{prefix}.s{i}.grow", padding=1))
        running = concat_channels(running, h)
    return running


def uvnet_forward(x, weights: ModelWeights, config: UVNetConfig | None = None) -> Tensor:
    """Map an (N, in_channels, H, W) batch to (N, out_channels, H, W)."""
    config = config or weights.config
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 4:
        raise ValueError(f"UV-Net input must be rank 4 (N, C, H, W), got {x.shape}")
    if x.shape[1] != config.in_channels:
        raise ValueError(f"UV-Net expects {config.in_channels} input channels, got {x.shape[1]}")
    h, w = x.shape[2:]
    for level in range(config.depth):
        sh, sw = h >> level, w >> level
        if sh % 2 or sw % 2:
            raise ValueError(
                f"input {h}x{w} cannot be pooled at level {level}: spatial size {sh}x{sw} is not even "
                f"(need H and W divisible by {2**config.depth})"
            )
    x = relu(_conv(x, weights, "stem", padding=1))
    skips = []
    for level in range(config.depth):
        x = vblock_forward(x, VBlockConfig(config.level_f(level)), weights, f"enc{level}")
        skips.append(x)
        x = maxpool2d(x, 2)
    x = vblock_forward(x, VBlockConfig(config.level_f(config.depth)), weights, "mid")
    for level in reversed(range(config.depth)):
        x = concat_channels(upsample2x(x), skips.pop())
        x = relu(_conv(x, weights, f"dec{level}.reduce"))
        x = vblock_forward(x, VBlockConfig(config.level_f(level)), weights, f"dec{level}")
    return _conv(x, weights, "head")


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "uvmitosis-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(weights: ModelWeights, path, extra: dict | None = None) -> None:
    """Write weights and config as a versioned JSON document."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": weights.config.to_json(),
        "parameters": {
            name: {"shape": list(p.shape), "values": p.data.astype(np.float64).ravel().tolist()}
            for name, p in weights.params.items()
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ModelWeights, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    config = UVNetConfig.from_json(doc["config"])
    reference = build_uvnet(config)
    params = {}
    for name, ref in reference.params.items():
        if name not in doc["parameters"]:
            raise ValueError(f"{path}: missing parameter {name}")
        entry = doc["parameters"][name]
        if tuple(entry["shape"]) != ref.shape:
            raise ValueError(f"{path}: parameter {name} has shape {entry['shape']}, expected {list(ref.shape)}")
        params[name] = Parameter(np.asarray(entry["values"], dtype=np.float64).reshape(ref.shape), name)
    unknown = set(doc["parameters"]) - set(params)
    if unknown:
        raise ValueError(f"{path}: unexpected parameters {sorted(unknown)}")
    return ModelWeights(config, params), doc.get("extra", {})
