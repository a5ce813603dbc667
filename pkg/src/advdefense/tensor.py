"""Dense float tensors with reverse-mode differentiation.

The op set is exactly what the classifiers, the auto-encoder, the input-space
attack and the saliency maps need: 2-D cross-correlation, dense affine maps,
relu/sigmoid, 2x2 max pooling, nearest-neighbour upsampling, softmax
cross-entropy and mean squared error, plus a little elementwise glue.

Values are stored as float32; reductions (losses, sums, means) accumulate in
float64 and cast back.  Building the same graph from float64 leaves gives the
64-bit shadow mode used by the finite-difference tests.

Gradients are computed by ``Tensor.backward()`` on a scalar node and land in
the ``.grad`` field of every tensor that requires them.  Parameters are
created with ``requires_grad=True``; ordinary input images are not, so
training never pays for input gradients.  The attack and saliency code marks
its inputs explicitly.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GradientError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def frozen(tensors):
    """Temporarily clear ``requires_grad`` on the given tensors.

    Used by the attack and saliency code to skip parameter-gradient work
    when only an input or feature gradient is wanted.
    """
    tensors = list(tensors)
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        # closures hand over freshly allocated arrays, so the first
        # contribution can be adopted without a copy
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    # -- graph construction ---------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward(out)
        return out

    def backward(self):
        """Reverse-mode sweep from this scalar node.

        Populates ``.grad`` on every reachable tensor that requires a
        gradient.  Deterministic for a fixed graph: children are visited in
        construction order, reversed.
        """
        if self.data.size != 1:
            raise GradientError(
                f"backward() requires a scalar loss node, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise GradientError("loss node does not require a gradient; nothing to do")
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) and dtype is None else Tensor(x, dtype=dtype)


def _coerce_pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.dtype != b.dtype:
        wide = np.promote_types(a.dtype, b.dtype)
        a, b = as_tensor(a, wide), as_tensor(b, wide)
    return a, b


# -- elementwise glue ----------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        data = a.data + a.dtype.type(b)

        def bwd(out):
            def run():
                if a.requires_grad:
                    a._accum(out.grad.copy())

            return run

        return Tensor._result(data, (a,), bwd)
    a, b = _coerce_pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accum(out.grad.copy())
            if b.requires_grad:
                b._accum(out.grad.copy())

        return run

    return Tensor._result(a.data + b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        c = a.dtype.type(b)

        def bwd(out):
            def run():
                if a.requires_grad:
                    a._accum(out.grad * c)

            return run

        return Tensor._result(a.data * c, (a,), bwd)
    a, b = _coerce_pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accum(out.grad * b.data)
            if b.requires_grad:
                b._accum(out.grad * a.data)

        return run

    return Tensor._result(a.data * b.data, (a, b), bwd)


def reshape(x, *shape) -> Tensor:
    x = as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.shape

    def bwd(out):
        def run():
            if x.requires_grad:
                x._accum(out.grad.reshape(old))

        return run

    return Tensor._result(x.data.reshape(shape), (x,), bwd)


def tsum(x) -> Tensor:
    x = as_tensor(x)
    data = np.asarray(x.data.sum(dtype=np.float64)).astype(x.dtype)

    def bwd(out):
        def run():
            if x.requires_grad:
                x._accum(np.full_like(x.data, out.grad))

        return run

    return Tensor._result(data, (x,), bwd)


def tmean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size
    data = np.asarray(x.data.sum(dtype=np.float64) / n).astype(x.dtype)

    def bwd(out):
        def run():
            if x.requires_grad:
                x._accum(np.full_like(x.data, out.grad / n))

        return run

    return Tensor._result(data, (x,), bwd)


def pick(x, index: int) -> Tensor:
    """Select one element of a 1-D tensor as a scalar node."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"pick: expected a 1-D tensor, got shape {x.shape}")
    if not 0 <= index < x.data.shape[0]:
        raise IndexError(f"pick: index {index} out of range for length {x.data.shape[0]}")

    def bwd(out):
        def run():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[index] = out.grad
                x._accum(g)

        return run

    return Tensor._result(np.asarray(x.data[index]), (x,), bwd)


# -- activations -----------------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0)

    def bwd(out):
        def run():
            if x.requires_grad:
                x._accum(out.grad * (x.data > 0))

        return run

    return Tensor._result(data, (x,), bwd)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    data = np.empty_like(v)
    pos = v >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    data[~pos] = ev / (1.0 + ev)

    def bwd(out):
        def run():
            if x.requires_grad:
                x._accum(out.grad * data * (1.0 - data))

        return run

    return Tensor._result(data, (x,), bwd)


def activation(x, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind: {kind!r} (expected 'relu' or 'sigmoid')")


# -- structured layers --------------------------------------------------------------


def _as_batched(x: np.ndarray, want_ndim: int):
    """Promote a single sample to a batch of one; report whether we did."""
    if x.ndim == want_ndim:
        return x, False
    if x.ndim == want_ndim - 1:
        return x[None], True
    raise ShapeError(f"expected a {want_ndim - 1}-D sample or {want_ndim}-D batch, got shape {x.shape}")


def conv2d(x, weight, bias, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) over a CHW image or NCHW batch.

    Output spatial size is floor((H + 2*pad - kH) / stride) + 1, likewise for
    width.  Gradients flow to the image, the kernel and the bias.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias)
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"conv2d: pad must be >= 0, got {pad}")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-D (Cout,Cin,kH,kW), got shape {weight.shape}")
    x4, squeeze = _as_batched(x.data, 4)
    n, cin, h, w = x4.shape
    cout, kin, kh, kw = weight.shape
    if kin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {kin}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(
            f"conv2d: padded input {h + 2 * pad}x{w + 2 * pad} smaller than kernel {kh}x{kw}"
        )
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1

    xp = np.pad(x4, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x4
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    y = cols @ wmat.T
    y += bias.data
    data = y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if squeeze:
        data = data[0]

    def bwd(out):
        def run():
            gy = out.grad if not squeeze else out.grad[None]
            gmat = gy.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
            if weight.requires_grad:
                weight._accum((gmat.T @ cols).reshape(weight.shape))
            if bias.requires_grad:
                bias._accum(gy.sum(axis=(0, 2, 3), dtype=np.float64).astype(bias.dtype))
            if x.requires_grad:
                gcols = gmat @ wmat
                g6 = gcols.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                gxp = np.zeros_like(xp)
                for a in range(kh):
                    for b in range(kw):
                        gxp[:, :, a : a + stride * ho : stride, b : b + stride * wo : stride] += g6[:, :, a, b]
                gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
                if squeeze:
                    gx = gx[0]
                x._accum(np.ascontiguousarray(gx) if pad else gx)

        return run

    return Tensor._result(data, (x, weight, bias), bwd)


def dense(x, weight, bias) -> Tensor:
    """Affine map: out[i] = sum_j weight[i,j] * x[j] + bias[i] (row batches allowed)."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias)
    if weight.data.ndim != 2:
        raise ShapeError(f"dense: weight must be 2-D (m,n), got shape {weight.shape}")
    m, k = weight.shape
    if bias.data.shape != (m,):
        raise ShapeError(f"dense: bias shape {bias.shape} does not match {m} outputs")
    x2, squeeze = _as_batched(x.data, 2)
    if x2.shape[1] != k:
        raise ShapeError(f"dense: input width {x2.shape[1]} does not match weight width {k}")
    data = x2 @ weight.data.T + bias.data
    if squeeze:
        data = data[0]

    def bwd(out):
        def run():
            gy = out.grad if not squeeze else out.grad[None]
            if weight.requires_grad:
                weight._accum(gy.T @ x2)
            if bias.requires_grad:
                bias._accum(gy.sum(axis=0, dtype=np.float64).astype(bias.dtype))
            if x.requires_grad:
                gx = gy @ weight.data
                x._accum(gx[0] if squeeze else gx)

        return run

    return Tensor._result(data, (x, weight, bias), bwd)


def maxpool2(x) -> Tensor:
    """2x2 max pooling with stride 2; gradient goes to the first max in
    window scan order."""
    x = as_tensor(x)
    x4, squeeze = _as_batched(x.data, 4)
    n, c, h, w = x4.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    ho, wo = h // 2, w // 2
    windows = x4.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = windows.argmax(axis=-1)
    data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        data = data[0]

    def bwd(out):
        def run():
            if not x.requires_grad:
                return
            gy = out.grad if not squeeze else out.grad[None]
            gwin = np.zeros((n, c, ho, wo, 4), dtype=x.dtype)
            np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=-1)
            gx = gwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            x._accum(gx[0] if squeeze else gx)

        return run

    return Tensor._result(data, (x,), bwd)


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2x upsampling; backward sums each 2x2 block."""
    x = as_tensor(x)
    x4, squeeze = _as_batched(x.data, 4)
    n, c, h, w = x4.shape
    data = np.repeat(np.repeat(x4, 2, axis=2), 2, axis=3)
    if squeeze:
        data = data[0]

    def bwd(out):
        def run():
            if x.requires_grad:
                gy = out.grad if not squeeze else out.grad[None]
                gx = gy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
                x._accum(gx[0] if squeeze else gx)

        return run

    return Tensor._result(data, (x,), bwd)


# -- losses ------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (plain array helper)."""
    z = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True).astype(np.float64)
    e = np.exp(z)
    return (e / e.sum(axis=-1, keepdims=True)).astype(logits.dtype)


def softmax_cross_entropy(logits, label) -> tuple[Tensor, Tensor]:
    """Cross-entropy of softmax(logits) against an integer class label.

    Accepts a logit vector with a scalar label, or a batch of logit rows with
    a label per row (the loss is then the batch mean).  Returns the scalar
    loss node and the detached probability tensor.
    """
    logits = as_tensor(logits)
    v = logits.data
    if v.ndim == 1:
        labels = np.asarray([label], dtype=np.int64)
        rows = v[None]
        batched = False
    elif v.ndim == 2:
        labels = np.asarray(label, dtype=np.int64).reshape(-1)
        rows = v
        if labels.shape[0] != rows.shape[0]:
            raise ShapeError(
                f"softmax_cross_entropy: {rows.shape[0]} logit rows but {labels.shape[0]} labels"
            )
        batched = True
    else:
        raise ShapeError(f"softmax_cross_entropy: logits must be 1-D or 2-D, got shape {v.shape}")
    k = rows.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"softmax_cross_entropy: label {bad} out of range [0, {k})")

    z = rows.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nb = rows.shape[0]
    losses = lse - z[np.arange(nb), labels]
    loss_val = np.asarray(losses.mean()).astype(logits.dtype)
    probs64 = np.exp(z - lse[:, None])
    probs = probs64.astype(logits.dtype)

    def bwd(out):
        def run():
            if logits.requires_grad:
                g = probs64.copy()
                g[np.arange(nb), labels] -= 1.0
                g *= float(out.grad) / nb
                g = g.astype(logits.dtype)
                logits._accum(g if batched else g[0])

        return run

    loss = Tensor._result(loss_val, (logits,), bwd)
    return loss, Tensor(probs if batched else probs[0])


def mse(pred, target) -> Tensor:
    """Mean squared elementwise difference as a scalar loss node."""
    pred, target = _coerce_pair(pred, target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    data = np.asarray(np.square(diff, dtype=np.float64).sum() / n).astype(pred.dtype)

    def bwd(out):
        def run():
            scale = 2.0 * float(out.grad) / n
            if pred.requires_grad:
                pred._accum((scale * diff).astype(pred.dtype))
            if target.requires_grad:
                target._accum((-scale * diff).astype(target.dtype))

        return run

    return Tensor._result(data, (pred, target), bwd)
