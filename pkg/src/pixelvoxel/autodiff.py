"""Minimal dense-tensor reverse-mode autodiff.

Covers exactly the operator set the segmentation network needs: 2D
convolution, batch norm, ReLU, max pooling, point-set max/tile, channel
concat/slice, channel softmax, elementwise product, bilinear upsampling
and a handful of reductions.  Storage is row-major float32 by default;
reductions accumulate in float64.  No higher-order gradients, no dynamic
control flow inside the graph.
"""

from __future__ import annotations

import struct
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when an op would produce NaN/Inf from its inputs."""


def _check_finite(data: np.ndarray, opname: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{opname} produced non-finite values")


class Tensor:
    """Dense array node in the computation graph.

    ``grad`` is allocated lazily during ``backward``.  Tensors are
    immutable once produced by an op; parameter updates go through the
    optimizer which rewrites ``data`` in place between steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self) -> None:
        """Reverse-mode sweep seeded with d(self)/d(self) = 1."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, opname: str) -> Tensor:
    _check_finite(data, opname)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _node(a.data + b.data, (a, b), backward, "add")


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _node(a.data * s, (a,), backward, "scale")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), backward, "hadamard")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _node(np.maximum(a.data, 0), (a,), backward, "relu")


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d: input rank {a.data.ndim}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _node(a.data.T.copy(), (a,), backward, "transpose2d")


def sum_all(a: Tensor) -> Tensor:
    val = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)))

    return _node(val, (a,), backward, "sum_all")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise affine map: [n,din] @ [din,dout] + [dout].

    The shared-weight 1x1 convolution of the point branch.
    """
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: {x.shape} @ {w.shape}")
    y = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} vs dout {w.shape[1]}")
        y = y + b.data

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0, dtype=np.float64).astype(b.dtype))

    return _node(y, parents, backward, "linear")


# ---------------------------------------------------------------------------
# convolution


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    cin, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((cin, kh, kw, ho, wo), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, di, dj] = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
    return cols.reshape(cin * kh * kw, ho * wo), ho, wo


def _col2im(gcols: np.ndarray, shape, kh, kw, stride, pad):
    cin, h, w = shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    g = gcols.reshape(cin, kh, kw, ho, wo)
    gxp = np.zeros((cin, hp, wp), dtype=gcols.dtype)
    for di in range(kh):
        for dj in range(kw):
            gxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += g[:, di, dj]
    if pad:
        return gxp[:, pad:hp - pad, pad:wp - pad]
    return gxp


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a [cin,h,w] map with [cout,cin,kh,kw] weights."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape}, weights {w.shape}")
    cout, cin, kh, kw = w.shape
    if x.shape[0] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[0]} vs weight cin {cin}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} vs cout {cout}")
    if kh < 1 or kw < 1 or stride < 1:
        raise ShapeError("conv2d: kernel and stride must be >= 1")
    _, h, win = x.shape
    if (h + 2 * pad - kh) % stride or (win + 2 * pad - kw) % stride:
        raise ShapeError(
            f"conv2d: size {h}x{win} with k={kh}x{kw} stride={stride} pad={pad} "
            "does not tile into an integer output grid")
    if h + 2 * pad < kh or win + 2 * pad < kw:
        raise ShapeError("conv2d: kernel larger than padded input")

    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(cout, cin * kh * kw)
    y = (wmat @ cols + b.data[:, None]).reshape(cout, ho, wo)

    def backward(g):
        gm = g.reshape(cout, ho * wo)
        if w.requires_grad:
            w._accumulate((gm @ cols.T).reshape(w.shape))
        if b.requires_grad:
            b._accumulate(gm.sum(axis=1, dtype=np.float64).astype(b.dtype))
        if x.requires_grad:
            x._accumulate(_col2im(wmat.T @ gm, x.shape, kh, kw, stride, pad))

    return _node(y, (x, w, b), backward, "conv2d")


# ---------------------------------------------------------------------------
# batch normalization

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _bn_axes(x: np.ndarray):
    # [c,h,w] maps normalize per channel over space; [n,d] rows per feature.
    if x.ndim == 3:
        return 0, (1, 2)
    if x.ndim == 2:
        return 1, (0,)
    raise ShapeError(f"batchnorm: unsupported rank {x.ndim}")


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray,
              train: bool) -> Tensor:
    """Normalize per channel; train mode uses batch stats and updates the
    running exponential moving averages in place."""
    caxis, raxes = _bn_axes(x.data)
    c = x.shape[caxis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta {gamma.shape}/{beta.shape} vs channels {c}")
    if x.data.size == 0:
        raise ShapeError("batchnorm: empty input")

    def expand(v):
        return v[:, None, None] if x.data.ndim == 3 else v[None, :]

    nred = int(np.prod([x.shape[a] for a in raxes]))
    if train:
        mu = x.data.mean(axis=raxes, dtype=np.float64)
        var = x.data.var(axis=raxes, dtype=np.float64)
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mu.astype(running_mean.dtype)
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var.astype(running_var.dtype)
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = ((x.data - expand(mu.astype(x.dtype))) * expand(inv.astype(x.dtype)))
    y = expand(gamma.data) * xhat + expand(beta.data)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=raxes, dtype=np.float64).astype(gamma.dtype))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=raxes, dtype=np.float64).astype(beta.dtype))
        if x.requires_grad:
            gs = g * expand(gamma.data)
            if train:
                m1 = gs.mean(axis=raxes, keepdims=True, dtype=np.float64)
                m2 = (gs * xhat).mean(axis=raxes, keepdims=True, dtype=np.float64)
                gx = expand(inv.astype(x.dtype)) * (gs - m1 - xhat * m2)
            else:
                gx = gs * expand(inv.astype(x.dtype))
            x._accumulate(gx.astype(x.dtype, copy=False))

    del nred
    return _node(y, (x, gamma, beta), backward, "batchnorm")


# ---------------------------------------------------------------------------
# pooling / point-set ops


def maxpool2d(x: Tensor, k: int, stride: int) -> tuple[Tensor, np.ndarray]:
    """Per-window max over a [c,h,w] map; ties break to the lowest flat
    index within the window.  Returns (pooled, argmax window offsets)."""
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2d: input rank {x.data.ndim}")
    c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"maxpool2d: window {k} larger than input {h}x{w}")
    if (h - k) % stride or (w - k) % stride:
        raise ShapeError(f"maxpool2d: {h}x{w} does not tile with k={k} stride={stride}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    windows = np.empty((k * k, c, ho, wo), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            windows[di * k + dj] = x.data[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
    arg = windows.argmax(axis=0)  # first occurrence = lowest flat offset
    y = np.take_along_axis(windows, arg[None], axis=0)[0]

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        ci, ii, jj = np.meshgrid(np.arange(c), np.arange(ho), np.arange(wo), indexing="ij")
        di, dj = arg // k, arg % k
        np.add.at(gx, (ci, ii * stride + di, jj * stride + dj), g)
        x._accumulate(gx)

    return _node(y, (x,), backward, "maxpool2d"), arg


def reduce_max_over_points(x: Tensor) -> Tensor:
    """Columnwise max over an [n,d] point-feature matrix -> [1,d].

    The order-invariant pooling of the point branch; ties route the
    gradient to the lowest row index.
    """
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"reduce_max_over_points: input {x.shape}")
    arg = x.data.argmax(axis=0)
    y = x.data[arg, np.arange(x.shape[1])][None, :]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[arg, np.arange(x.shape[1])] = g[0]
            x._accumulate(gx)

    return _node(y, (x,), backward, "reduce_max")


def tile_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a [1,d] row n times -> [n,d]; backward sums over rows."""
    if x.data.ndim != 2 or x.shape[0] != 1:
        raise ShapeError(f"tile_rows: input {x.shape}")
    if n < 1:
        raise ShapeError(f"tile_rows: n={n}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.sum(axis=0, keepdims=True, dtype=np.float64).astype(x.dtype))

    return _node(np.repeat(x.data, n, axis=0), (x,), backward, "tile_rows")


def _concat_axis(ndim: int) -> int:
    if ndim == 3:
        return 0  # channel axis of [c,h,w]
    if ndim == 2:
        return 1  # feature axis of [n,d]
    raise ShapeError(f"channel concat/slice: unsupported rank {ndim}")


def channel_concat(inputs: Sequence[Tensor]) -> Tensor:
    if len(inputs) < 2:
        raise ShapeError("channel_concat: need at least 2 inputs")
    ndim = inputs[0].data.ndim
    axis = _concat_axis(ndim)
    ref = list(inputs[0].shape)
    for t in inputs[1:]:
        other = list(t.shape)
        if t.data.ndim != ndim or [d for i, d in enumerate(other) if i != axis] != \
                [d for i, d in enumerate(ref) if i != axis]:
            raise ShapeError(f"channel_concat: {inputs[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in inputs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(inputs, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _node(np.concatenate([t.data for t in inputs], axis=axis),
                 tuple(inputs), backward, "channel_concat")


def channel_slice(x: Tensor, ranges: Sequence[tuple[int, int]]) -> list[Tensor]:
    """Slice channel bands [start, end); exact inverse of channel_concat."""
    axis = _concat_axis(x.data.ndim)
    extent = x.shape[axis]
    taken = []
    for lo, hi in ranges:
        if not (0 <= lo < hi <= extent):
            raise ShapeError(f"channel_slice: range [{lo},{hi}) outside extent {extent}")
        taken.append((lo, hi))
    taken_sorted = sorted(taken)
    for (a0, a1), (b0, _) in zip(taken_sorted, taken_sorted[1:]):
        if b0 < a1:
            raise ShapeError("channel_slice: overlapping ranges")

    outs = []
    for lo, hi in ranges:
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(lo, hi)
        sl = tuple(sl)

        def backward(g, sl=sl):
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                gx[sl] = g
                x._accumulate(gx)

        outs.append(_node(x.data[sl].copy(), (x,), backward, "channel_slice"))
    return outs


def softmax_over_channels(x: Tensor) -> Tensor:
    """Softmax along the channel axis of [c,h,w] (or the feature axis of
    [n,d]); max-subtracted for overflow safety."""
    axis = 0 if x.data.ndim == 3 else 1
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

    def backward(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)
            x._accumulate(y * (g - dot))

    return _node(y, (x,), backward, "softmax_over_channels")


def upsample_bilinear(x: Tensor, h2: int, w2: int) -> Tensor:
    """Align-corners bilinear resize of a [c,h,w] map."""
    if x.data.ndim != 3:
        raise ShapeError(f"upsample_bilinear: input rank {x.data.ndim}")
    if h2 < 1 or w2 < 1:
        raise ShapeError("upsample_bilinear: target size must be >= 1")
    c, h, w = x.shape

    def grid(src, dst):
        if dst == 1 or src == 1:
            pos = np.zeros(dst)
        else:
            pos = np.arange(dst) * (src - 1) / (dst - 1)
        lo = np.floor(pos).astype(np.int64)
        lo = np.minimum(lo, src - 1)
        hi = np.minimum(lo + 1, src - 1)
        frac = (pos - lo).astype(x.dtype)
        return lo, hi, frac

    i0, i1, fi = grid(h, h2)
    j0, j1, fj = grid(w, w2)
    fi_ = fi[None, :, None]
    fj_ = fj[None, None, :]
    top = x.data[:, i0][:, :, j0] * (1 - fj_) + x.data[:, i0][:, :, j1] * fj_
    bot = x.data[:, i1][:, :, j0] * (1 - fj_) + x.data[:, i1][:, :, j1] * fj_
    y = top * (1 - fi_) + bot * fi_

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        ii0 = np.broadcast_to(i0[:, None], (h2, w2))
        ii1 = np.broadcast_to(i1[:, None], (h2, w2))
        jj0 = np.broadcast_to(j0[None, :], (h2, w2))
        jj1 = np.broadcast_to(j1[None, :], (h2, w2))
        wfi = np.broadcast_to(fi[:, None], (h2, w2)).astype(x.dtype)
        wfj = np.broadcast_to(fj[None, :], (h2, w2)).astype(x.dtype)
        for ch in range(c):
            gc = g[ch]
            np.add.at(gx[ch], (ii0, jj0), gc * (1 - wfi) * (1 - wfj))
            np.add.at(gx[ch], (ii0, jj1), gc * (1 - wfi) * wfj)
            np.add.at(gx[ch], (ii1, jj0), gc * wfi * (1 - wfj))
            np.add.at(gx[ch], (ii1, jj1), gc * wfi * wfj)
        x._accumulate(gx)

    return _node(y, (x,), backward, "upsample_bilinear")


# ---------------------------------------------------------------------------
# parameters / optimizer


class Parameter:
    """Trainable tensor plus its momentum buffer and LR multiplier.

    Newly initialized parameters in a fine-tuning stage carry a 10x
    multiplier; everything else runs at 1x.
    """

    def __init__(self, data: np.ndarray, lr_mult: float = 1.0):
        self.tensor = Tensor(np.asarray(data), requires_grad=True)
        if lr_mult < 0:
            raise ValueError("lr_mult must be >= 0")
        self.lr_mult = lr_mult
        self.velocity = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


def sgd_momentum_step(params: Sequence[Parameter], lr: float,
                      momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """v <- m*v + g + wd*theta; theta <- theta - lr*mult*v; grads cleared."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for p in params:
        if p.tensor.grad is None:
            raise ValueError("sgd_momentum_step: parameter has no gradient")
    for p in params:
        g = p.tensor.grad + weight_decay * p.tensor.data
        p.velocity *= momentum
        p.velocity += g
        p.tensor.data = p.tensor.data - lr * p.lr_mult * p.velocity
        p.tensor.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_gradcheck(f: Callable[[Tensor], Tensor], x: Tensor,
                                eps: float = 1e-5) -> float:
    """Compare reverse-mode d f/d x against central differences.

    Returns the worst relative error over all elements of ``x`` with an
    absolute floor of 1e-8 in the denominator.
    """
    if not (1e-6 <= eps <= 1e-2):
        raise ValueError(f"eps {eps} outside [1e-6, 1e-2]")
    probe = Tensor(x.data.astype(np.float64), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ValueError("gradcheck target must be scalar-valued")
    if not np.isfinite(out.data):
        raise NonFiniteError("gradcheck: non-finite function value")
    out.backward()
    analytic = probe.grad.copy()

    flat = probe.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(probe.data.copy())).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(probe.data.copy())).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format

CHECKPOINT_MAGIC = b"PVNET1"


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    """Binary checkpoint: magic, then per-array records of
    (u64 name length, name bytes, u64 rank, u64 extents..., f32 values),
    all little-endian, sorted by name for byte stability."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name in sorted(arrays):
            arr = arrays[name]
            data = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", data.ndim))
            for ext in data.shape:
                fh.write(struct.pack("<Q", ext))
            fh.write(data.tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a PVNET1 checkpoint")
        out: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(8)
            if not head:
                break
            (nlen,) = struct.unpack("<Q", head)
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            vals = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            out[name] = vals.copy()
    return out
