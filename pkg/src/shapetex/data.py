"""Synthetic shape-texture dataset, label strategies, and mix augmentations.

Clean samples of class ``k`` render shape family ``k`` filled with texture
family ``k`` on a plain background, so both cues predict the label perfectly
on clean data.  Cue-conflict batches pair each image's shape with another
image's texture via the stylizer; the label strategies then decide which cue
the supervision rewards.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import synth
from .errors import InvalidLabelError, PairingError, RangeError, SpecValidationError
from .ppm import read_ppm, write_ppm
from .rng import component_rng
from .stylizer import stylize_batch

STRATEGIES = ("shape_biased", "texture_biased", "debiased")


@dataclass
class LabeledImage:
    """Image plus the class of its shape source and of its texture fill.

    ``mask`` is the foreground silhouette when one exists; ``None`` marks a
    full-frame sample with no shape cue (the texture-only probe flag).
    """

    pixels: np.ndarray
    shape_class: int
    texture_class: int
    mask: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SoftLabel:
    """Probability vector over classes."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs)
        if p.ndim != 1:
            raise InvalidLabelError(f"soft label must be 1-d, got shape {p.shape}")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-6:
            raise InvalidLabelError(f"soft label entries must be >= 0 and sum to 1, got {p}")


@dataclass
class CueConflictSample:
    """Stylized image with the classes of both cue sources and its training label."""

    image: np.ndarray
    shape_label: int
    texture_label: int
    soft_label: SoftLabel


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of the synthetic dataset; defaults give ShapeTexture-10."""

    num_classes: int = 10
    image_size: int = 64
    samples_per_class: int = 500
    val_per_class: int = 50
    seed: int = 0
    shape_params: synth.ShapeParams = field(default_factory=synth.ShapeParams)
    texture_params: synth.TextureParams = field(default_factory=synth.TextureParams)
    noise_sigma: tuple = (0.01, 0.03)

    def validate(self):
        bad = []
        if not 2 <= self.num_classes <= len(synth.SHAPE_FAMILIES):
            bad.append(f"num_classes must be in [2, {len(synth.SHAPE_FAMILIES)}]")
        if self.image_size < 16 or self.image_size % 4:
            bad.append("image_size must be >= 16 and divisible by 4")
        if self.samples_per_class < 2:
            bad.append("samples_per_class must be >= 2")
        if self.val_per_class < 1:
            bad.append("val_per_class must be >= 1")
        if bad:
            raise SpecValidationError("invalid dataset spec: " + "; ".join(bad))


def _render_one(spec, split_idx, k, i, texture_family=None):
    rng = component_rng(spec.seed, "dataset", extra=(split_idx, k, i))
    tex = k if texture_family is None else texture_family
    pixels, mask = synth.render_sample(
        k, tex, spec.image_size, rng, spec.shape_params, spec.texture_params, spec.noise_sigma
    )
    return LabeledImage(pixels=pixels, shape_class=k, texture_class=tex, mask=mask)


def generate_dataset(spec):
    """Render the clean train/val splits; deterministic given ``spec.seed``.

    Each sample owns an rng stream keyed by (split, class, index), so the
    splits are disjoint by construction and any one image can be re-rendered
    in isolation.
    """
    spec.validate()
    train = [
        _render_one(spec, 0, k, i)
        for k in range(spec.num_classes)
        for i in range(spec.samples_per_class)
    ]
    val = [
        _render_one(spec, 1, k, i)
        for k in range(spec.num_classes)
        for i in range(spec.val_per_class)
    ]
    return train, val


def onehot(k, num_classes):
    if not 0 <= k < num_classes:
        raise RangeError(f"class index {k} outside [0, {num_classes})")
    p = np.zeros(num_classes, dtype=np.float32)
    p[k] = 1.0
    return p


def assign_label(strategy, y_s, y_t, gamma, num_classes):
    """Label for a cue-conflict image per the chosen strategy.

    ``shape_biased`` is one-hot on the shape source, ``texture_biased`` on
    the texture source, and ``debiased`` puts ``gamma`` on the shape class
    and ``1 - gamma`` on the texture class (masses merge when they agree).
    The biased strategies coincide exactly with debiased at gamma 1 and 0.
    """
    if strategy not in STRATEGIES:
        raise RangeError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if not 0.0 <= gamma <= 1.0:
        raise RangeError(f"gamma must be in [0, 1], got {gamma}")
    if strategy == "shape_biased":
        gamma = 1.0
    elif strategy == "texture_biased":
        gamma = 0.0
    probs = np.zeros(num_classes, dtype=np.float32)
    if not 0 <= y_s < num_classes:
        raise RangeError(f"shape class {y_s} outside [0, {num_classes})")
    if not 0 <= y_t < num_classes:
        raise RangeError(f"texture class {y_t} outside [0, {num_classes})")
    probs[y_s] += np.float32(gamma)
    probs[y_t] += np.float32(1.0 - gamma)
    return SoftLabel(probs=probs)


def draw_partners(n, rng):
    """For each index i, a uniform partner j != i."""
    if n < 2:
        raise PairingError(f"cue-conflict pairing needs a batch of >= 2, got {n}")
    j = rng.integers(0, n - 1, size=n)
    j = j + (j >= np.arange(n))
    return j


def make_cue_conflict_batch(batch, codec, cfg, rng, strategy="debiased", gamma=0.8):
    """Stylize every batch image with a random partner's texture.

    Image ``i`` keeps its shape and takes the texture of a uniformly drawn
    ``j != i`` (same-class partners allowed); labels record both sources and
    ``strategy``/``gamma`` decide the training label.
    """
    partners = draw_partners(len(batch), rng)
    shape_px = np.stack([b.pixels for b in batch])
    texture_px = shape_px[partners]
    stylized = stylize_batch(shape_px, texture_px, cfg, codec)
    out = []
    num_classes = max(max(b.shape_class, b.texture_class) for b in batch) + 1
    for i, j in enumerate(partners):
        y_s = batch[i].shape_class
        y_t = batch[j].texture_class
        out.append(
            CueConflictSample(
                image=stylized[i],
                shape_label=y_s,
                texture_label=y_t,
                soft_label=assign_label(strategy, y_s, y_t, gamma, num_classes),
            )
        )
    return out


def mixup(image_a, label_a, image_b, label_b, lam):
    """Convex pixel and label blend: lam * a + (1 - lam) * b."""
    if not 0.0 <= lam <= 1.0:
        raise RangeError(f"lambda must be in [0, 1], got {lam}")
    lam = np.float32(lam)
    img = lam * image_a + (np.float32(1.0) - lam) * image_b
    probs = lam * label_a.probs + (np.float32(1.0) - lam) * label_b.probs
    return img, SoftLabel(probs=probs)


def cutmix_box(rng, h, w):
    """CutMix box: area ratio 1 - lam with lam ~ Beta(1, 1), clipped to frame."""
    lam = rng.uniform(0.0, 1.0)
    cut = np.sqrt(1.0 - lam)
    bh, bw = int(round(h * cut)), int(round(w * cut))
    cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
    y0, y1 = np.clip(cy - bh // 2, 0, h), np.clip(cy - bh // 2 + bh, 0, h)
    x0, x1 = np.clip(cx - bw // 2, 0, w), np.clip(cx - bw // 2 + bw, 0, w)
    return int(y0), int(y1), int(x0), int(x1)


def cutmix_apply(image_a, label_a, image_b, label_b, box):
    """Paste ``box`` of image b into image a; labels weigh by pasted area."""
    y0, y1, x0, x1 = box
    h, w = image_a.shape[1], image_a.shape[2]
    img = image_a.copy()
    img[:, y0:y1, x0:x1] = image_b[:, y0:y1, x0:x1]
    frac = np.float32((y1 - y0) * (x1 - x0) / (h * w))
    probs = (np.float32(1.0) - frac) * label_a.probs + frac * label_b.probs
    return img, SoftLabel(probs=probs)


def cutmix(image_a, label_a, image_b, label_b, rng):
    """Random-box CutMix; see :func:`cutmix_box` for the sampling convention."""
    if image_a.shape != image_b.shape:
        raise SpecValidationError(f"cutmix: sizes {image_a.shape} vs {image_b.shape}")
    box = cutmix_box(rng, image_a.shape[1], image_a.shape[2])
    return cutmix_apply(image_a, label_a, image_b, label_b, box)


def shape_only_probe_set(spec, n_per_class=50):
    """Silhouettes of each class filled with a uniformly random texture family.

    The texture is uninformative by construction; the informative cue (and
    the evaluation label) is ``shape_class``.
    """
    spec.validate()
    out = []
    for k in range(spec.num_classes):
        for i in range(n_per_class):
            rng = component_rng(spec.seed, "probe", extra=(0, k, i))
            tex = int(rng.integers(0, spec.num_classes))
            pixels, mask = synth.render_sample(
                k, tex, spec.image_size, rng, spec.shape_params, spec.texture_params,
                spec.noise_sigma,
            )
            out.append(LabeledImage(pixels=pixels, shape_class=k, texture_class=tex, mask=mask))
    return out


def texture_only_probe_set(spec, n_per_class=50):
    """Full-frame texture patches with no silhouette (mask is None).

    The informative cue (and the evaluation label) is ``texture_class``.
    """
    spec.validate()
    out = []
    for k in range(spec.num_classes):
        for i in range(n_per_class):
            rng = component_rng(spec.seed, "probe", extra=(1, k, i))
            tex_img = synth.render_texture_image(k, spec.image_size, rng, spec.texture_params)
            sigma = rng.uniform(*spec.noise_sigma)
            tex_img = np.clip(tex_img + rng.normal(0.0, sigma, tex_img.shape), 0.0, 1.0)
            out.append(
                LabeledImage(
                    pixels=tex_img.astype(np.float32), shape_class=k, texture_class=k, mask=None
                )
            )
    return out


# ---------------------------------------------------------------------------
# export / import


def export_dataset(train, val, out_dir):
    """Write PPM files plus a manifest; filenames encode the split."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for split, samples in (("train", train), ("val", val)):
        for i, s in enumerate(samples):
            name = f"{split}_{i:05d}.ppm"
            write_ppm(os.path.join(out_dir, name), s.pixels)
            manifest.append(
                {"filename": name, "shape_class": int(s.shape_class), "texture_class": int(s.texture_class)}
            )
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def import_dataset(in_dir):
    """Load an exported dataset back; masks are not persisted and load as None."""
    with open(os.path.join(in_dir, "manifest.json")) as f:
        manifest = json.load(f)
    train, val = [], []
    for entry in manifest:
        img = LabeledImage(
            pixels=read_ppm(os.path.join(in_dir, entry["filename"])),
            shape_class=int(entry["shape_class"]),
            texture_class=int(entry["texture_class"]),
        )
        (train if entry["filename"].startswith("train_") else val).append(img)
    return train, val


def stack_pixels(samples):
    """[N, 3, H, W] float32 array from a list of LabeledImages."""
    return np.ascontiguousarray(np.stack([s.pixels for s in samples]).astype(np.float32))


def label_array(samples, cue):
    """Integer labels per the informative cue: 'shape' or 'texture'."""
    if cue == "shape":
        return np.array([s.shape_class for s in samples], dtype=np.int64)
    if cue == "texture":
        return np.array([s.texture_class for s in samples], dtype=np.int64)
    raise RangeError(f"cue must be 'shape' or 'texture', got {cue!r}")
