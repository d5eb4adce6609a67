"""Minimal dense-tensor engine with reverse-mode differentiation.

Only the operations the UV-Net trunk needs are provided: 2-D convolution
(cross-correlation), 2x2 max pooling, nearest-neighbour upsampling, channel
concatenation, ReLU and the Huber loss. Tensors are laid out NCHW.

Every op records a closure that pushes the upstream gradient into its
parents; :meth:`Tensor.backward` walks the graph in reverse topological
order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """An array plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar, accumulating into ``.grad`` of leaves."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        # intermediate gradients live here; only leaves keep theirs on .grad
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# forward ops


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(
            f"conv2d expects rank-4 input and weights, got input {x.shape} and weights {weight.shape}"
        )
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(
            f"conv2d channel mismatch: input {x.shape} has {c} channels, weights {weight.shape} expect {ci}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel must be odd-sized, got weights {weight.shape}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} does not match weights {weight.shape}")
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"kernel {weight.shape} larger than padded input {x.shape}")

    wmat = weight.data.reshape(o, c * kh * kw)
    if kh == 1 and kw == 1 and padding == 0:
        cols = None
        # (N, C, HW) -> (N, O, HW)
        out = np.matmul(wmat, x.data.reshape(n, c, h * w)).reshape(n, o, ho, wo)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, kh, kw
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
        out = np.matmul(wmat, cols).reshape(n, o, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(g):
        gm = g.reshape(n, o, ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            src = x.data.reshape(n, c, h * w) if cols is None else cols
            gw = np.einsum("nok,nck->oc", gm, src, optimize=True).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gm)  # N, C*kh*kw, HoWo
            if cols is None:
                gx = gcols.reshape(n, c, h, w)
            else:
                gcols = gcols.reshape(n, c, kh, kw, ho, wo)
                gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + ho, j:j + wo] += gcols[:, :, i, j]
                gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must divide by ``window``."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"maxpool2d needs spatial dims divisible by {window}, got {x.shape}")
    blocks = x.data.reshape(n, c, h // window, window, w // window, window)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // window, w // window, window * window)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // window, w // window, window, window).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return _result(out, (x,), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ValueError(f"concat_channels expects rank-4 tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ValueError(f"concat_channels batch/spatial mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return _result(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return _result(out, (x,), backward)


@dataclass(frozen=True)
class HuberConfig:
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"Huber delta must be > 0, got {self.delta}")


def huber_loss(prediction: Tensor, target, config: HuberConfig = HuberConfig()) -> Tensor:
    """Mean Huber loss; quadratic inside ``delta``, linear outside."""
    prediction = as_tensor(prediction)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if prediction.shape != t.shape:
        raise ValueError(f"huber_loss shape mismatch: prediction {prediction.shape} vs target {t.shape}")
    d = config.delta
    r = prediction.data - t
    a = np.abs(r)
    quad = a <= d
    per = np.where(quad, 0.5 * r * r, d * (a - 0.5 * d))
    out = np.asarray(per.mean(), dtype=prediction.dtype)
    scale = 1.0 / r.size

    def backward(g):
        return ((np.where(quad, r, d * np.sign(r)) * (g * scale)).astype(prediction.dtype, copy=False),)

    return _result(out, (prediction,), backward)


# ---------------------------------------------------------------------------
# parameters and optimisation


class Parameter(Tensor):
    """A trainable leaf carrying its own Adam moments and step counter."""

    __slots__ = ("moment1", "moment2", "step_count")

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, copy=True), requires_grad=True, name=name)
        self.moment1 = np.zeros_like(self.data)
        self.moment2 = np.zeros_like(self.data)
        self.step_count = 0

    def astype(self, dtype) -> "Parameter":
        p = Parameter(self.data.astype(dtype), name=self.name)
        p.moment1 = self.moment1.astype(dtype)
        p.moment2 = self.moment2.astype(dtype)
        p.step_count = self.step_count
        return p


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def adam_step(params: Iterable[Parameter], config: AdamConfig = AdamConfig()) -> None:
    """One bias-corrected Adam update in place, then clear the gradients.

    Parameters without a gradient are treated as having a zero gradient.
    """
    b1, b2 = config.beta1, config.beta2
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step_count += 1
        t = p.step_count
        p.moment1 *= b1
        p.moment1 += (1 - b1) * g
        p.moment2 *= b2
        p.moment2 += (1 - b2) * (g * g)
        m_hat = p.moment1 / (1 - b1**t)
        v_hat = p.moment2 / (1 - b2**t)
        p.data -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)).astype(p.dtype, copy=False)
        p.grad = None


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None
