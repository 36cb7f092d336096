"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array plus an optional gradient and a record
of the operation that produced it.  Calling :func:`backward` on a scalar
result sweeps the graph in reverse topological order, summing gradients into
every tensor that requires them.

Layout conventions: row-major data, images as NCHW.  Training code runs in
float32; gradient checking builds float64 graphs (finite differences are not
trustworthy in 32-bit).  Convolution is im2col + one matmul per batch chunk,
with chunks sized to keep the column buffer cache-resident; this matters far
more than FLOPs on memory-starved machines.
"""

import contextlib

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DegenerateBatchError, DimensionError, InvalidLabelError

BN_EPS = 1e-5

# Target byte size for im2col column buffers; chunks of the batch are sized
# so the gather stays in cache instead of thrashing DRAM.
_COLS_BUDGET = 4 << 20

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional array with optional gradient.

    ``data`` is always a numpy array; ``grad`` is a same-shape array or None.
    Tensors produced by ops carry the closures needed for the reverse sweep.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            self.data = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None


def _result(data, parents, backward_fn):
    """Wrap an op result, attaching the graph record only when it matters."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def backward(root, grad=None):
    """Reverse sweep from ``root``, accumulating (summing) gradients.

    ``grad`` defaults to ones; for non-scalar roots pass it explicitly.
    Gradients sum when a tensor feeds several consumers.
    """
    if not root.requires_grad:
        return
    if grad is None:
        grad = np.ones_like(root.data)
    root.accumulate_grad(np.asarray(grad, dtype=root.data.dtype))

    # Iterative post-order topological sort (graphs can be deep).
    topo, visited, stack = [], set(), [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
            # Free interior gradients and closures as we go.
            node._backward_fn = None
            node._parents = ()
            node.grad = None if node is not root else node.grad


def zero_grad(tensors):
    """Clear gradients on an iterable of tensors or parameters."""
    for t in tensors:
        value = getattr(t, "value", t)
        value.zero_grad()


def _same_dtype(a, b, op):
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: mixed dtypes {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add: shapes {a.data.shape} vs {b.data.shape}")
    _same_dtype(a.data, b.data, "add")
    out_data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _result(out_data, (a, b), backward_fn)


def scale(a, c):
    """Multiply a tensor by a python scalar."""
    c = float(c)
    out_data = a.data * a.data.dtype.type(c)

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g * a.data.dtype.type(c))

    return _result(out_data, (a,), backward_fn)


def relu(a):
    out_data = np.maximum(a.data, 0)

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g * (out_data > 0))

    return _result(out_data, (a,), backward_fn)


def sigmoid(a):
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        if a.requires_grad:
            a.accumulate_grad(g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), backward_fn)


def mean_squared_error(pred, target):
    """Mean of squared differences; differentiable w.r.t. ``pred`` only."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if tgt.shape != pred.data.shape:
        raise DimensionError(f"mse: shapes {pred.data.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    out_data = np.array((diff * diff).mean(), dtype=pred.dtype)

    def backward_fn(g):
        if pred.requires_grad:
            pred.accumulate_grad((2.0 / diff.size) * g * diff)

    return _result(out_data, (pred,), backward_fn)


# ---------------------------------------------------------------------------
# linear algebra ops


def linear(x, weight, bias):
    """Affine map ``x @ weight.T + bias`` for x of shape [N, D]."""
    if x.data.ndim != 2:
        raise DimensionError(f"linear: input must be 2-d, got {x.data.shape}")
    if weight.data.ndim != 2 or weight.data.shape[1] != x.data.shape[1]:
        raise DimensionError(
            f"linear: weight {weight.data.shape} incompatible with input axis 1 ({x.data.shape[1]})"
        )
    if bias.data.shape != (weight.data.shape[0],):
        raise DimensionError(f"linear: bias shape {bias.data.shape} != ({weight.data.shape[0]},)")
    out_data = x.data @ weight.data.T + bias.data

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data)
        if weight.requires_grad:
            weight.accumulate_grad(g.T @ x.data)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return _result(out_data, (x, weight, bias), backward_fn)


def softmax(logits):
    """Row-wise softmax over the last axis."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        if logits.requires_grad:
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            logits.accumulate_grad(out_data * (g - dot))

    return _result(out_data, (logits,), backward_fn)


def log_softmax_array(z):
    """Numerically stable log-softmax on a plain array (no graph)."""
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def soft_cross_entropy(logits, target, validate=True):
    """Mean over rows of ``-sum_k target_k * log softmax(logits)_k``.

    ``target`` rows must be probability vectors (sum 1 within 1e-6, K >= 2).
    Differentiable w.r.t. logits; gradient is (softmax - target) / N.
    """
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    tgt = tgt.astype(logits.dtype, copy=False)
    if tgt.shape != logits.data.shape:
        raise DimensionError(f"soft_cross_entropy: target {tgt.shape} vs logits {logits.data.shape}")
    if logits.data.shape[-1] < 2:
        raise InvalidLabelError("soft_cross_entropy: needs at least 2 classes")
    if validate:
        sums = tgt.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(tgt < 0):
            raise InvalidLabelError(f"target rows must sum to 1 within 1e-6 (got sums {sums})")
    n = logits.data.shape[0]
    logp = log_softmax_array(logits.data)
    out_data = np.array(-(tgt * logp).sum() / n, dtype=logits.dtype)

    def backward_fn(g):
        if logits.requires_grad:
            p = np.exp(logp)
            logits.accumulate_grad((p - tgt) * (g / n))

    return _result(out_data, (logits,), backward_fn)


# ---------------------------------------------------------------------------
# spatial ops


def _pad_nhwc(xt, padding):
    if padding == 0:
        return xt
    return np.pad(xt, ((0, 0), (padding, padding), (padding, padding), (0, 0)))


def _conv_out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _im2col_chunk(xt, kh, kw, stride, h2, w2):
    """Gather sliding windows of a padded NHWC chunk into [n*h2*w2, kh*kw*C]."""
    n, _, _, c = xt.shape
    s = xt.strides
    win = as_strided(
        xt,
        (n, h2, w2, kh, kw, c),
        (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]),
    )
    return win.reshape(n * h2 * w2, kh * kw * c)


def _conv_chunk_size(n, h2, w2, kh, kw, c, itemsize):
    per_image = h2 * w2 * kh * kw * c * itemsize
    return max(1, min(n, _COLS_BUDGET // max(per_image, 1)))


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-d cross-correlation of NCHW input with [K, C, kh, kw] weights.

    Output spatial size is floor((H + 2p - kh)/stride) + 1 (same for W).
    Gradients are defined w.r.t. input, weight and bias; the input gradient
    is only computed when the input requires it (images usually do not).
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: input must be NCHW, got {x.data.shape}")
    n, c, h, w = x.data.shape
    kout, cw, kh, kw = weight.data.shape
    if cw != c:
        raise DimensionError(f"conv2d: weight channel axis {cw} != input channel axis {c}")
    if bias.data.shape != (kout,):
        raise DimensionError(f"conv2d: bias shape {bias.data.shape} != ({kout},)")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel ({kh},{kw}) exceeds padded input ({h + 2 * padding},{w + 2 * padding})"
        )
    _same_dtype(x.data, weight.data, "conv2d")

    h2 = _conv_out_size(h, kh, stride, padding)
    w2 = _conv_out_size(w, kw, stride, padding)
    xt = _pad_nhwc(np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)), padding)
    wmat = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, kout))

    out_nhwc = np.empty((n, h2, w2, kout), dtype=x.data.dtype)
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        np.matmul(xt.reshape(n * h2 * w2, c), wmat, out=out_nhwc.reshape(n * h2 * w2, kout))
    else:
        chunk = _conv_chunk_size(n, h2, w2, kh, kw, c, x.data.itemsize)
        for i in range(0, n, chunk):
            cols = _im2col_chunk(xt[i : i + chunk], kh, kw, stride, h2, w2)
            m = cols.shape[0]
            np.matmul(cols, wmat, out=out_nhwc[i : i + chunk].reshape(m, kout))
    out_nhwc += bias.data
    out_data = np.ascontiguousarray(out_nhwc.transpose(0, 3, 1, 2))

    def backward_fn(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gflat_all = gt.reshape(n * h2 * w2, kout)
        if bias.requires_grad:
            bias.accumulate_grad(gflat_all.sum(axis=0))
        need_dx = x.requires_grad
        need_dw = weight.requires_grad
        if not (need_dx or need_dw):
            return
        dxt = np.zeros_like(xt) if need_dx else None
        dwmat = np.zeros_like(wmat) if need_dw else None
        if pointwise:
            if need_dw:
                dwmat += xt.reshape(-1, c).T @ gflat_all
            if need_dx:
                dxt += (gflat_all @ wmat.T).reshape(xt.shape)
        else:
            chunk = _conv_chunk_size(n, h2, w2, kh, kw, c, x.data.itemsize)
            wt = wmat.T if need_dx else None
            for i in range(0, n, chunk):
                nc = min(chunk, n - i)
                gflat = gt[i : i + nc].reshape(nc * h2 * w2, kout)
                if need_dw:
                    cols = _im2col_chunk(xt[i : i + nc], kh, kw, stride, h2, w2)
                    dwmat += cols.T @ gflat
                if need_dx:
                    dcols = (gflat @ wt).reshape(nc, h2, w2, kh, kw, c)
                    dst = dxt[i : i + nc]
                    for dy in range(kh):
                        ys = slice(dy, dy + (h2 - 1) * stride + 1, stride)
                        for dx_ in range(kw):
                            xs = slice(dx_, dx_ + (w2 - 1) * stride + 1, stride)
                            dst[:, ys, xs, :] += dcols[:, :, :, dy, dx_, :]
        if need_dw:
            weight.accumulate_grad(
                dwmat.reshape(kh, kw, c, kout).transpose(3, 2, 0, 1)
            )
        if need_dx:
            if padding:
                dxt = dxt[:, padding:-padding, padding:-padding, :]
            x.accumulate_grad(np.ascontiguousarray(dxt.transpose(0, 3, 1, 2)))

    return _result(out_data, (x, weight, bias), backward_fn)


def max_pool2d(x, kernel):
    """Non-overlapping max pooling (stride == kernel); ties pick the first cell."""
    n, c, h, w = x.data.shape
    if h % kernel or w % kernel:
        raise DimensionError(f"max_pool2d: spatial {h}x{w} not divisible by kernel {kernel}")
    ho, wo = h // kernel, w // kernel
    xr = np.ascontiguousarray(
        x.data.reshape(n, c, ho, kernel, wo, kernel).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, ho, wo, kernel * kernel)
    idx = xr.argmax(axis=-1)
    out_data = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        if not x.requires_grad:
            return
        dxr = np.zeros((n, c, ho, wo, kernel * kernel), dtype=g.dtype)
        np.put_along_axis(dxr, idx[..., None], g[..., None], axis=-1)
        dx = (
            dxr.reshape(n, c, ho, wo, kernel, kernel)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        x.accumulate_grad(np.ascontiguousarray(dx))

    return _result(out_data, (x,), backward_fn)


def global_avg_pool(x):
    """Mean over the spatial axes: [N, C, H, W] -> [N, C]."""
    n, c, h, w = x.data.shape
    out_data = x.data.mean(axis=(2, 3))

    def backward_fn(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape))

    return _result(out_data, (x,), backward_fn)


def upsample_nearest(x, factor):
    """Nearest-neighbor upsampling by an integer factor on both spatial axes."""
    if factor < 1:
        raise DimensionError(f"upsample_nearest: factor must be >= 1, got {factor}")
    out_data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward_fn(g):
        if x.requires_grad:
            n, c, h, w = x.data.shape
            gsum = g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
            x.accumulate_grad(gsum)

    return _result(out_data, (x,), backward_fn)


def batch_norm(x, state, mode):
    """Batch normalization over (N, H, W) per channel with an epsilon floor.

    ``state`` carries running_mean/running_var buffers, the affine scale and
    shift parameters and the update momentum.  Train mode normalizes by batch
    statistics (population variance) and updates the running buffers in place
    as ``running = (1 - m) * running + m * batch``; eval mode is a pure
    function of the running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: mode must be 'train' or 'eval', got {mode!r}")
    n, c, h, w = x.data.shape
    scale, shift = state.scale.value, state.shift.value
    if scale.data.shape != (c,):
        raise DimensionError(f"batch_norm: scale shape {scale.data.shape} != ({c},)")

    if mode == "train":
        count = n * h * w
        if count < 2:
            raise DegenerateBatchError(f"batch_norm: {count} value(s) per channel, need >= 2")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean *= 1.0 - m
        state.running_mean += m * mean.astype(state.running_mean.dtype)
        state.running_var *= 1.0 - m
        state.running_var += m * var.astype(state.running_var.dtype)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
        out_data = xhat * scale.data[None, :, None, None] + shift.data[None, :, None, None]

        def backward_fn(g):
            if shift.requires_grad:
                shift.accumulate_grad(g.sum(axis=(0, 2, 3)))
            if scale.requires_grad:
                scale.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
            if x.requires_grad:
                cnt = n * h * w
                gm = g.mean(axis=(0, 2, 3))
                gxm = (g * xhat).sum(axis=(0, 2, 3)) / cnt
                dx = (scale.data * inv)[None, :, None, None] * (
                    g - gm[None, :, None, None] - xhat * gxm[None, :, None, None]
                )
                x.accumulate_grad(dx)

        return _result(out_data, (x, scale, shift), backward_fn)

    inv = 1.0 / np.sqrt(state.running_var + BN_EPS)
    a = (scale.data * inv).astype(x.data.dtype)
    b = (shift.data - state.running_mean * a).astype(x.data.dtype)
    out_data = x.data * a[None, :, None, None] + b[None, :, None, None]

    def backward_fn(g):
        if shift.requires_grad:
            shift.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if scale.requires_grad:
            xhat = (x.data - state.running_mean[None, :, None, None]) * inv[None, :, None, None]
            scale.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate_grad(g * a[None, :, None, None])

    return _result(out_data, (x, scale, shift), backward_fn)
