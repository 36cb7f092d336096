"""Residual CNN with dual batch-norm branches and class activation maps.

Every normalization layer keeps two sets of running statistics: the main
branch sees only clean images, the auxiliary branch only cue-conflict images.
Affine scale/shift are shared between branches by default (``share_affine``),
so evaluation through the main branch is unchanged by the aux route existing.
Evaluation always uses the main branch.
"""

import numpy as np

from . import tensor as T
from .errors import DimensionError, RangeError
from .optim import Parameter
from .rng import component_rng

IMAGE_SIZE = 64
STAGE_WIDTHS = (32, 64, 128)


class BNState:
    """Running statistics plus affine parameters for one batch-norm branch."""

    __slots__ = ("running_mean", "running_var", "scale", "shift", "momentum")

    def __init__(self, channels, momentum=0.1, scale=None, shift=None):
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.scale = scale if scale is not None else Parameter(np.ones(channels, dtype=np.float32))
        self.shift = shift if shift is not None else Parameter(np.zeros(channels, dtype=np.float32))
        self.momentum = momentum


class DualBNLayer:
    """Main/aux pair of BN states with disjoint running statistics."""

    __slots__ = ("main", "aux", "share_affine")

    def __init__(self, channels, momentum=0.1, share_affine=True):
        self.main = BNState(channels, momentum)
        if share_affine:
            self.aux = BNState(channels, momentum, scale=self.main.scale, shift=self.main.shift)
        else:
            self.aux = BNState(channels, momentum)
        self.share_affine = share_affine

    def __call__(self, x, branch, mode):
        state = self.main if branch == "main" else self.aux
        return T.batch_norm(x, state, mode)


class _ConvLayer:
    __slots__ = ("weight", "bias", "stride", "padding")

    def __init__(self, rng, in_ch, out_ch, kernel, stride, padding, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.weight = Parameter(
            rng.normal(0.0, std, size=(out_ch, in_ch, kernel, kernel)).astype(dtype)
        )
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.weight.value, self.bias.value, self.stride, self.padding)


class _ResidualBlock:
    """conv-BN-relu-conv-BN plus (projected) shortcut, both norms dual."""

    __slots__ = ("conv1", "bn1", "conv2", "bn2", "proj", "proj_bn")

    def __init__(self, rng, in_ch, out_ch, stride, momentum, share_affine):
        self.conv1 = _ConvLayer(rng, in_ch, out_ch, 3, stride, 1)
        self.bn1 = DualBNLayer(out_ch, momentum, share_affine)
        self.conv2 = _ConvLayer(rng, out_ch, out_ch, 3, 1, 1)
        self.bn2 = DualBNLayer(out_ch, momentum, share_affine)
        if stride != 1 or in_ch != out_ch:
            self.proj = _ConvLayer(rng, in_ch, out_ch, 1, stride, 0)
            self.proj_bn = DualBNLayer(out_ch, momentum, share_affine)
        else:
            self.proj = None
            self.proj_bn = None

    def __call__(self, x, branch, mode):
        out = T.relu(self.bn1(self.conv1(x), branch, mode))
        out = self.bn2(self.conv2(out), branch, mode)
        if self.proj is not None:
            shortcut = self.proj_bn(self.proj(x), branch, mode)
        else:
            shortcut = x
        return T.relu(T.add(out, shortcut))


class DebiasNet:
    """Small residual classifier for 64x64 RGB images.

    Patchify stem (4x4 conv, stride 4) to 16x16, then three residual stages
    of two blocks at widths 32/64/128 and resolutions 16->8->4->4, global
    average pooling, and a linear head.  ``forward`` routes every norm layer
    to the requested statistics branch.
    """

    def __init__(self, num_classes=10, seed=0, share_affine=True, bn_momentum=0.1):
        rng = component_rng(seed, "model_init")
        self.num_classes = num_classes
        self.share_affine = share_affine
        self.seed = seed
        w1, w2, w3 = STAGE_WIDTHS

        self.stem = _ConvLayer(rng, 3, w1, 4, 4, 0)
        self.stem_bn = DualBNLayer(w1, bn_momentum, share_affine)
        self.stage1 = [
            _ResidualBlock(rng, w1, w1, 2, bn_momentum, share_affine),
            _ResidualBlock(rng, w1, w1, 1, bn_momentum, share_affine),
        ]
        self.stage2 = [
            _ResidualBlock(rng, w1, w2, 2, bn_momentum, share_affine),
            _ResidualBlock(rng, w2, w2, 1, bn_momentum, share_affine),
        ]
        self.stage3 = [
            _ResidualBlock(rng, w2, w3, 1, bn_momentum, share_affine),
            _ResidualBlock(rng, w3, w3, 1, bn_momentum, share_affine),
        ]
        fan_in = w3
        self.fc_weight = Parameter(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(num_classes, w3)).astype(np.float32)
        )
        self.fc_bias = Parameter(np.zeros(num_classes, dtype=np.float32))

    # -- structure walks ---------------------------------------------------

    def _blocks(self):
        for block in self.stage1 + self.stage2 + self.stage3:
            yield block

    def dual_bn_layers(self):
        yield self.stem_bn
        for block in self._blocks():
            yield block.bn1
            yield block.bn2
            if block.proj_bn is not None:
                yield block.proj_bn

    def parameters(self):
        """All trainable parameters; shared affine params listed once."""
        params, seen = [], set()

        def _add(p):
            if id(p) not in seen:
                seen.add(id(p))
                params.append(p)

        def _conv(c):
            _add(c.weight)
            _add(c.bias)

        _conv(self.stem)
        for layer in self.dual_bn_layers():
            for state in (layer.main, layer.aux):
                _add(state.scale)
                _add(state.shift)
        for block in self._blocks():
            _conv(block.conv1)
            _conv(block.conv2)
            if block.proj is not None:
                _conv(block.proj)
        _add(self.fc_weight)
        _add(self.fc_bias)
        return params

    # -- forward -----------------------------------------------------------

    def features(self, images, branch="main", mode="eval"):
        """Final-stage feature maps [N, 128, 4, 4]."""
        if images.data.ndim != 4 or images.data.shape[1] != 3:
            raise DimensionError(f"expected [N,3,H,W] images, got {images.data.shape}")
        if images.data.shape[2] != IMAGE_SIZE or images.data.shape[3] != IMAGE_SIZE:
            raise DimensionError(
                f"expected {IMAGE_SIZE}x{IMAGE_SIZE} input, got {images.data.shape[2]}x{images.data.shape[3]}"
            )
        x = T.relu(self.stem_bn(self.stem(images), branch, mode))
        for block in self._blocks():
            x = block(x, branch, mode)
        return x

    def forward(self, images, branch="main", mode="eval"):
        """Logits [N, K]; in train mode only the selected branch's stats move."""
        if branch not in ("main", "aux"):
            raise ValueError(f"branch must be 'main' or 'aux', got {branch!r}")
        feats = self.features(images, branch, mode)
        pooled = T.global_avg_pool(feats)
        return T.linear(pooled, self.fc_weight.value, self.fc_bias.value)

    # -- persistence ---------------------------------------------------------

    def named_tensors(self):
        """Ordered name -> array mapping of every weight and running buffer."""
        out = {}

        def _conv(prefix, c):
            out[f"{prefix}.weight"] = c.weight.value.data
            out[f"{prefix}.bias"] = c.bias.value.data

        def _bn(prefix, layer):
            for branch in ("main", "aux"):
                state = getattr(layer, branch)
                out[f"{prefix}.{branch}.running_mean"] = state.running_mean
                out[f"{prefix}.{branch}.running_var"] = state.running_var
                if branch == "main" or not layer.share_affine:
                    out[f"{prefix}.{branch}.scale"] = state.scale.value.data
                    out[f"{prefix}.{branch}.shift"] = state.shift.value.data

        _conv("stem", self.stem)
        _bn("stem_bn", self.stem_bn)
        for si, stage in enumerate((self.stage1, self.stage2, self.stage3), start=1):
            for bi, block in enumerate(stage, start=1):
                p = f"stage{si}.block{bi}"
                _conv(f"{p}.conv1", block.conv1)
                _bn(f"{p}.bn1", block.bn1)
                _conv(f"{p}.conv2", block.conv2)
                _bn(f"{p}.bn2", block.bn2)
                if block.proj is not None:
                    _conv(f"{p}.proj", block.proj)
                    _bn(f"{p}.proj_bn", block.proj_bn)
        out["fc.weight"] = self.fc_weight.value.data
        out["fc.bias"] = self.fc_bias.value.data
        return out

    def load_named_tensors(self, table):
        """Restore weights and buffers saved by :meth:`named_tensors`."""
        mine = self.named_tensors()
        missing = set(mine) - set(table)
        extra = set(table) - set(mine)
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, arr in mine.items():
            src = table[name]
            if src.shape != arr.shape:
                raise DimensionError(f"{name}: shape {src.shape} != {arr.shape}")
            arr[...] = src


def predict(net, images, batch_size=250):
    """Argmax class indices via the main branch in eval mode.

    Ties break toward the lowest class index.  Accepts a Tensor or array.
    """
    data = images.data if isinstance(images, T.Tensor) else np.asarray(images, dtype=np.float32)
    preds = np.empty(data.shape[0], dtype=np.int64)
    with T.no_grad():
        for i in range(0, data.shape[0], batch_size):
            logits = net.forward(T.Tensor(data[i : i + batch_size]), "main", "eval")
            preds[i : i + batch_size] = np.argmax(logits.data, axis=1)
    return preds


def _bilinear_upsample(grid, out_h, out_w):
    """Bilinear resize of a 2-d array, corners aligned to corners."""
    h, w = grid.shape
    if h == 1 and w == 1:
        return np.full((out_h, out_w), grid[0, 0], dtype=grid.dtype)
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    top = g00 * (1 - fx) + g01 * fx
    bot = g10 * (1 - fx) + g11 * fx
    return top * (1 - fy) + bot * fy


def cam(net, image, class_k):
    """Class activation map for one image, normalized to [0, 1].

    Weighs the final-stage feature maps by the classifier row for
    ``class_k``, upsamples bilinearly to the input size, and min-max
    normalizes.  A constant weighted sum yields an all-zero map.
    """
    if not 0 <= class_k < net.num_classes:
        raise RangeError(f"class index {class_k} outside [0, {net.num_classes})")
    data = image.data if isinstance(image, T.Tensor) else np.asarray(image, dtype=np.float32)
    if data.ndim == 3:
        data = data[None]
    with T.no_grad():
        feats = net.features(T.Tensor(data), "main", "eval").data[0]
    weights = net.fc_weight.value.data[class_k]
    heat = np.tensordot(weights, feats, axes=(0, 0))
    heat = _bilinear_upsample(heat, data.shape[2], data.shape[3])
    lo, hi = float(heat.min()), float(heat.max())
    if hi - lo < 1e-12:
        return np.zeros_like(heat)
    return (heat - lo) / (hi - lo)
