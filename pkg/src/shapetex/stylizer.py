"""Adaptive-instance-normalization style transfer on a small autoencoder.

Texture is moved between images by aligning per-channel feature statistics:
content features are renormalized to the style source's channel mean and
standard deviation at the deepest encoder level, blended with the original
content features by a coefficient ``alpha``, and decoded back to pixels.
The codec is a reconstruction autoencoder trained from scratch; statistics
use the population (biased) convention everywhere, with a floor on standard
deviations so flat channels cannot blow up the division.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, RangeError, TrainingFailureError, UninitializedStylizerError
from .optim import Parameter, sgd_step
from .rng import component_rng

STD_FLOOR = 1e-5
FEATURE_CHANNELS = 64
DOWNSAMPLE = 4


@dataclass(frozen=True)
class StyleTransferConfig:
    """Stylization coefficient and the std floor used by AdaIN."""

    alpha: float = 0.5
    std_floor: float = STD_FLOOR

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise RangeError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.std_floor <= 0:
            raise RangeError(f"std_floor must be > 0, got {self.std_floor}")


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel spatial mean and (floored) standard deviation."""

    mean: np.ndarray
    std: np.ndarray


def channel_stats(features, std_floor=STD_FLOOR):
    """Spatial mean/std per channel of a [C, h, w] feature map.

    Population std; values below ``std_floor`` are clamped to it.
    """
    f = features.data if isinstance(features, T.Tensor) else np.asarray(features)
    if f.ndim != 3 or f.shape[1] * f.shape[2] < 1:
        raise DimensionError(f"channel_stats: need [C, h, w] with h*w >= 1, got {f.shape}")
    mean = f.mean(axis=(1, 2))
    std = np.maximum(f.std(axis=(1, 2)), std_floor)
    return ChannelStats(mean=mean, std=std)


def adain(content_f, style_f, std_floor=STD_FLOOR):
    """Renormalize content features to the style source's channel statistics.

    out_c = std(style)_c * (x_c - mean(x)_c) / std(x)_c + mean(style)_c
    """
    c = content_f.data if isinstance(content_f, T.Tensor) else np.asarray(content_f)
    s = style_f.data if isinstance(style_f, T.Tensor) else np.asarray(style_f)
    if c.shape[0] != s.shape[0]:
        raise DimensionError(f"adain: channel axis {c.shape[0]} != {s.shape[0]}")
    return adain_batch(c[None], s[None], std_floor)[0]


def adain_batch(content_f, style_f, std_floor=STD_FLOOR):
    """Vectorized AdaIN over [N, C, h, w] feature batches."""
    cm = content_f.mean(axis=(2, 3), keepdims=True)
    cs = np.maximum(content_f.std(axis=(2, 3), keepdims=True), std_floor)
    sm = style_f.mean(axis=(2, 3), keepdims=True)
    ss = np.maximum(style_f.std(axis=(2, 3), keepdims=True), std_floor)
    return ss * (content_f - cm) / cs + sm


class _Conv:
    __slots__ = ("weight", "bias", "stride", "padding")

    def __init__(self, rng, in_ch, out_ch, kernel, stride, padding):
        std = np.sqrt(2.0 / (in_ch * kernel * kernel))
        self.weight = Parameter(rng.normal(0.0, std, (out_ch, in_ch, kernel, kernel)).astype(np.float32))
        self.bias = Parameter(np.zeros(out_ch, dtype=np.float32))
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.weight.value, self.bias.value, self.stride, self.padding)


class EncoderDecoder:
    """Reconstruction autoencoder with a 4x-downsampled 64-channel bottleneck.

    Encoder: three conv blocks (two with stride 2).  Decoder mirrors them
    with nearest-neighbor upsampling and a pointwise output layer squashed
    by a sigmoid, so decoded pixels always land in [0, 1].
    ``training_loss`` is None until the codec has been trained.
    """

    def __init__(self, seed=0):
        rng = component_rng(seed, "codec_init")
        self.seed = seed
        self.enc1 = _Conv(rng, 3, 16, 3, 2, 1)
        self.enc2 = _Conv(rng, 16, 32, 3, 2, 1)
        self.enc3 = _Conv(rng, 32, FEATURE_CHANNELS, 3, 1, 1)
        self.dec1 = _Conv(rng, FEATURE_CHANNELS, 32, 3, 1, 1)
        self.dec2 = _Conv(rng, 32, 16, 3, 1, 1)
        self.dec3 = _Conv(rng, 16, 3, 1, 1, 0)
        self.training_loss = None

    @property
    def trained(self):
        return self.training_loss is not None

    def layers(self):
        return [self.enc1, self.enc2, self.enc3, self.dec1, self.dec2, self.dec3]

    def parameters(self):
        params = []
        for layer in self.layers():
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def encode_graph(self, x):
        """Encoder forward on a Tensor (participates in autodiff)."""
        h = T.relu(self.enc1(x))
        h = T.relu(self.enc2(h))
        return T.relu(self.enc3(h))

    def decode_graph(self, f):
        """Decoder forward on a Tensor (participates in autodiff)."""
        h = T.relu(self.dec1(f))
        h = T.upsample_nearest(h, 2)
        h = T.relu(self.dec2(h))
        h = T.upsample_nearest(h, 2)
        return T.sigmoid(self.dec3(h))

    def encode(self, images, batch_size=64):
        """Feature maps [N, 64, H/4, W/4] for an [N, 3, H, W] array."""
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[1] != 3:
            raise DimensionError(f"encode: expected [N,3,H,W], got {images.shape}")
        if images.shape[2] % DOWNSAMPLE or images.shape[3] % DOWNSAMPLE:
            raise DimensionError(f"encode: spatial size must be divisible by {DOWNSAMPLE}")
        out = None
        with T.no_grad():
            for i in range(0, images.shape[0], batch_size):
                f = self.encode_graph(T.Tensor(images[i : i + batch_size])).data
                if out is None:
                    out = np.empty((images.shape[0],) + f.shape[1:], dtype=f.dtype)
                out[i : i + batch_size] = f
        return out

    def decode(self, features, batch_size=32):
        """Pixels [N, 3, H, W] in [0, 1] from [N, 64, H/4, W/4] features."""
        features = np.asarray(features, dtype=np.float32)
        out = None
        with T.no_grad():
            for i in range(0, features.shape[0], batch_size):
                img = self.decode_graph(T.Tensor(features[i : i + batch_size])).data
                if out is None:
                    out = np.empty((features.shape[0],) + img.shape[1:], dtype=img.dtype)
                out[i : i + batch_size] = img
        return out

    def reconstruct(self, images, batch_size=32):
        return self.decode(self.encode(images, batch_size), batch_size)

    # -- persistence -------------------------------------------------------

    def named_tensors(self):
        names = ["enc1", "enc2", "enc3", "dec1", "dec2", "dec3"]
        out = {}
        for name, layer in zip(names, self.layers()):
            out[f"{name}.weight"] = layer.weight.value.data
            out[f"{name}.bias"] = layer.bias.value.data
        return out

    def load_named_tensors(self, table):
        mine = self.named_tensors()
        if set(mine) != set(table):
            raise DimensionError(
                f"codec state mismatch: missing {sorted(set(mine) - set(table))}, "
                f"extra {sorted(set(table) - set(mine))}"
            )
        for name, arr in mine.items():
            if table[name].shape != arr.shape:
                raise DimensionError(f"{name}: shape {table[name].shape} != {arr.shape}")
            arr[...] = table[name]


def _as_pixel_array(images):
    """Stack a list of images (arrays or LabeledImage-likes) into [N,3,H,W]."""
    arrs = [img.pixels if hasattr(img, "pixels") else img for img in images]
    return np.ascontiguousarray(np.stack([np.asarray(a, dtype=np.float32) for a in arrs]))


def stylize_features(content_f, style_f, config):
    """Blend AdaIN-transformed features with the originals by ``alpha``."""
    mixed = adain_batch(content_f, style_f, config.std_floor)
    if config.alpha == 1.0:
        return mixed
    return config.alpha * mixed + (1.0 - config.alpha) * content_f


def stylize_batch(shape_images, texture_images, config, codec, batch_size=32):
    """Cue-conflict images: shape from the first batch, texture from the second."""
    if not codec.trained:
        raise UninitializedStylizerError("stylize: codec has not been trained")
    shape_images = np.asarray(shape_images, dtype=np.float32)
    texture_images = np.asarray(texture_images, dtype=np.float32)
    if shape_images.shape != texture_images.shape:
        raise DimensionError(
            f"stylize: shape sources {shape_images.shape} vs texture sources {texture_images.shape}"
        )
    content = codec.encode(shape_images, batch_size)
    style = codec.encode(texture_images, batch_size)
    blended = stylize_features(content, style, config)
    return np.clip(codec.decode(blended, batch_size), 0.0, 1.0)


def stylize(shape_src, texture_src, config, codec):
    """Single-image stylization; see :func:`stylize_batch`."""
    shape_src = np.asarray(shape_src, dtype=np.float32)
    texture_src = np.asarray(texture_src, dtype=np.float32)
    if shape_src.shape != texture_src.shape:
        raise DimensionError(f"stylize: sizes {shape_src.shape} vs {texture_src.shape}")
    return stylize_batch(shape_src[None], texture_src[None], config, codec)[0]


def train_autoencoder(
    dataset,
    epochs,
    opt,
    seed=0,
    batch_size=32,
    holdout_fraction=0.1,
    target_mse=0.01,
):
    """Train a reconstruction codec; returns it once held-out MSE beats target.

    Deterministic given ``seed``.  Raises :class:`TrainingFailureError` with
    the per-epoch loss curve if the held-out reconstruction error is still
    above ``target_mse`` after ``epochs``.
    """
    if len(dataset) == 0:
        raise DimensionError("train_autoencoder: dataset is empty")
    pixels = _as_pixel_array(dataset)
    rng = component_rng(seed, "codec_train")
    order = rng.permutation(len(pixels))
    n_hold = max(1, int(round(len(pixels) * holdout_fraction))) if len(pixels) > 1 else 0
    hold = pixels[order[:n_hold]] if n_hold else pixels
    train = pixels[order[n_hold:]] if n_hold else pixels

    codec = EncoderDecoder(seed=seed)
    params = codec.parameters()
    curve = []
    for epoch in range(epochs):
        perm = rng.permutation(len(train))
        epoch_loss = 0.0
        for i in range(0, len(train), batch_size):
            batch = train[perm[i : i + batch_size]]
            x = T.Tensor(batch)
            recon = codec.decode_graph(codec.encode_graph(x))
            loss = T.mean_squared_error(recon, batch)
            T.backward(loss)
            sgd_step(params, opt)
            epoch_loss += loss.item() * len(batch)
        curve.append(epoch_loss / len(train))

    held_mse = float(np.mean((codec.reconstruct(hold) - hold) ** 2))
    if held_mse >= target_mse:
        raise TrainingFailureError(
            f"autoencoder held-out MSE {held_mse:.5f} did not reach {target_mse}", curve
        )
    codec.training_loss = held_mse
    return codec
