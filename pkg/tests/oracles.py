"""Independent reference implementations used as test oracles."""

from itertools import permutations

import numpy as np
from uvmitosis.tensor import Tensor

FD_STEP = 1e-3
FD_RTOL = 1e-4
FD_ATOL = 1e-9


def numerical_grad(fn, arrays, index, step=FD_STEP):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    base = arrays[index]
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = base[i]
        base[i] = old + step
        up = fn(*arrays)
        base[i] = old - step
        down = fn(*arrays)
        base[i] = old
        grad[i] = (up - down) / (2 * step)
    return grad


def analytic_grads(build, arrays):
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def gradcheck(build, arrays, rtol=FD_RTOL, atol=FD_ATOL):
    """Compare autodiff against central differences for every input.

    ``build`` maps Tensors to a scalar Tensor. Returns the worst entry-wise
    relative error; raises AssertionError on failure.
    """
    arrays = [np.asarray(a, dtype=np.float64).copy() for a in arrays]

    def scalar(*arrs):
        return float(build(*[Tensor(a) for a in arrs]).data)

    worst = 0.0
    for k, ana in enumerate(analytic_grads(build, arrays)):
        num = numerical_grad(scalar, arrays, k)
        err = np.abs(ana - num)
        scale = np.maximum(np.abs(ana), np.abs(num))
        bad = err > rtol * scale + atol
        if bad.any():
            raise AssertionError(
                f"input {k}: {bad.sum()} entries off; max abs err {err.max():.3e}, "
                f"analytic {ana[bad][:3]}, numeric {num[bad][:3]}"
            )
        nz = scale > atol
        if nz.any():
            worst = max(worst, float((err[nz] / scale[nz]).max()))
    return worst


def away_from_zero(rng, shape, margin=0.05):
    """Normal samples pushed away from 0 so ReLU kinks stay outside the FD stencil."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def distinct_values(rng, shape, gap=0.01):
    """Values with pairwise gaps of at least ``gap`` (max-pool ties stay out of reach)."""
    n = int(np.prod(shape))
    vals = (np.arange(n) * gap + rng.uniform(0, gap / 4, n))
    return rng.permutation(vals).reshape(shape) - vals.mean()


def loop_conv2d(x, w, b, padding):
    """Nested-loop cross-correlation."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[oc]
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[bi, ci, i + di, j + dj] * w[oc, ci, di, dj]
                    out[bi, oc, i, j] = acc
    return out


def loop_maxpool(x):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2))
    for bi in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[bi, ci, i, j] = max(x[bi, ci, 2 * i + di, 2 * j + dj] for di in (0, 1) for dj in (0, 1))
    return out


def otsu_sweep(image, bins):
    """Exhaustive between-class variance over every bin boundary.

    Bin t holds values in (t/bins, (t+1)/bins]; boundary t splits bins
    0..t from t+1..bins-1. Returns (best boundary, its threshold value) or
    None when no boundary separates two nonempty classes.
    """
    vals = np.asarray(image, dtype=np.float64).ravel()
    idx = [min(max(int(np.ceil(v * bins)) - 1, 0), bins - 1) for v in vals]
    counts = [0] * bins
    for i in idx:
        counts[i] += 1
    total = len(vals)
    best, best_t = None, None
    for t in range(bins - 1):
        n0 = sum(counts[: t + 1])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        m0 = sum(counts[k] * (k + 0.5) / bins for k in range(t + 1)) / n0
        m1 = sum(counts[k] * (k + 0.5) / bins for k in range(t + 1, bins)) / n1
        var = (n0 / total) * (n1 / total) * (m0 - m1) ** 2
        if best is None or var > best * (1 + 1e-12) + 1e-300:
            best, best_t = var, t
    if best_t is None:
        return None
    return best_t, (best_t + 1) / bins


def brute_force_max_matches(preds, truths, radius):
    """Largest one-to-one matching within radius, by enumerating assignments."""
    preds, truths = list(preds), list(truths)
    if not preds or not truths:
        return 0
    small, large, flip = (preds, truths, False) if len(preds) <= len(truths) else (truths, preds, True)
    best = 0
    for perm in permutations(range(len(large)), len(small)):
        count = 0
        for i, j in enumerate(perm):
            p, t = (small[i], large[j]) if not flip else (large[j], small[i])
            if np.hypot(p[0] - t[0], p[1] - t[1]) <= radius:
                count += 1
        best = max(best, count)
    return best


def vblock_unrolled(x, params, prefix, f):
    """V-block by hand: four explicit stages with loop-free numpy convolutions."""
    def conv(inp, name, pad):
        w = params[f"{name}.weight"].data
        b = params[f"{name}.bias"].data
        return loop_conv2d_fast(inp, w, b, pad)

    running = x
    k = f // 4
    for i in range(4):
        assert running.shape[1] == f + i * k
        h = np.maximum(conv(running, f"{prefix}.s{i}.squeeze", 0), 0)
        h = np.maximum(conv(h, f"{prefix}.s{i}.grow", 1), 0)
        running = np.concatenate([running, h], axis=1)
    return running


def loop_conv2d_fast(x, w, b, padding):
    """Shift-and-accumulate convolution (independent of the im2col path)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    out = np.zeros((n, o, ho, wo)) + b[None, :, None, None]
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, :, di:di + ho, dj:dj + wo]
            for oc in range(o):
                for ci in range(c):
                    out[:, oc] += w[oc, ci, di, dj] * patch[:, ci]
    return out


def angle_deg(u, v):
    """Angle between two 3-vectors in degrees."""
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def random_stain(rng, min_angle=15.0):
    """Unit-norm stain pair with components in [0.2, 1], larger-blue column first."""
    while True:
        s = rng.uniform(0.2, 1.0, (3, 2))
        s /= np.linalg.norm(s, axis=0)
        if angle_deg(s[:, 0], s[:, 1]) > min_angle:
            return s if s[2, 0] >= s[2, 1] else s[:, ::-1].copy()


def model_od_image(rng, stain, n=64, max_od=1.2, background=0.1):
    """``(n, n, 3)`` OD image generated exactly as OD = S.C.

    A third of the pixels carry one stain only, a third the other, a third
    both; ``background`` of them are blank. Per-channel OD is capped at
    ``max_od`` so that the rendered uint8 image does not saturate.
    """
    c = rng.uniform(0.3, 1.2, (n * n, 2))
    kind = rng.integers(0, 3, n * n)
    c[kind == 0, 1] = 0
    c[kind == 1, 0] = 0
    c[rng.random(n * n) < background] = 0
    peak = (c @ stain.T).max(axis=1)
    c *= np.minimum(1.0, max_od / np.maximum(peak, 1e-9))[:, None]
    return (c @ stain.T).reshape(n, n, 3), c.reshape(n, n, 2)


def loop_binary_median(mask, window):
    """Majority vote in a window with replicated borders, by explicit loops."""
    m = np.asarray(mask).astype(int)
    h, w = m.shape
    r = window // 2
    out = np.zeros_like(m)
    for i in range(h):
        for j in range(w):
            votes = sum(m[min(max(i + di, 0), h - 1), min(max(j + dj, 0), w - 1)]
                        for di in range(-r, r + 1) for dj in range(-r, r + 1))
            out[i, j] = 1 if 2 * votes > window * window else 0
    return out


def disk_mask(shape, centers, radius):
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]]
    m = np.zeros(shape, dtype=bool)
    for cx, cy in centers:
        m |= (cols - cx) ** 2 + (rows - cy) ** 2 <= radius**2
    return m


def region_centroids(labels):
    """Pixel-mean (x, y) of every region id 1..N, by brute force."""
    out = []
    for k in range(1, int(labels.max()) + 1):
        rr, cc = np.nonzero(labels == k)
        out.append((cc.mean(), rr.mean()))
    return out
