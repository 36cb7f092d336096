"""Procedural shapes and textures for the synthetic dataset.

Ten shape families (silhouette masks) and ten texture families (full-frame
patterns with family-typical palettes), index-aligned with dataset classes.
Two deliberate confusions make both cues genuinely necessary:

* shapes 2/3/4 are regular polygons with 5/6/7 vertices - near-identical
  silhouettes at 64 px under random rotation, so telling those classes apart
  needs texture;
* textures 0/9 (straight vs. wavy horizontal stripes) and 7/8 (coarse vs.
  fine band-limited noise) share one palette per pair, so telling those
  classes apart needs shape.

All geometry/pattern parameters are drawn per sample from the supplied
generator; masks are exact analytic inequalities on the pixel grid (pixel
centers at integer + 0.5), so tests can re-derive them bit-for-bit.
"""

import colorsys
from dataclasses import dataclass

import numpy as np

SHAPE_FAMILIES = (
    "triangle",
    "square",
    "pentagon",
    "hexagon",
    "heptagon",
    "star",
    "ellipse",
    "annulus",
    "cross",
    "crescent",
)

TEXTURE_FAMILIES = (
    "stripes_h",
    "stripes_v",
    "stripes_diag",
    "checker",
    "dots",
    "grid",
    "rings",
    "blobs",
    "grain",
    "zigzag",
)

# Hue bands per texture family; 0/9 and 7/8 share a band on purpose.
_HUE_BANDS = {
    0: (0.00, 0.06),
    1: (0.10, 0.16),
    2: (0.55, 0.62),
    3: (0.30, 0.38),
    4: (0.78, 0.85),
    5: (0.48, 0.54),
    6: (0.66, 0.72),
    7: (0.20, 0.26),
    8: (0.20, 0.26),
    9: (0.00, 0.06),
}


@dataclass(frozen=True)
class ShapeParams:
    """Geometry jitter ranges shared by all shape families."""

    radius_range: tuple = (14.0, 21.0)
    center_jitter: float = 3.5


# Circumradius multipliers equalizing silhouette area across families
# (thin shapes like triangles and stars draw with a larger radius).
_AREA_NORM = {
    0: 1.30,  # triangle
    1: 1.05,  # square
    2: 0.96,  # pentagon
    3: 0.92,  # hexagon
    4: 0.90,  # heptagon
    5: 1.28,  # star
    6: 1.08,  # ellipse
    7: 1.01,  # annulus
    8: 1.01,  # cross
    9: 1.13,  # crescent
}


@dataclass(frozen=True)
class TextureParams:
    """Pattern jitter ranges shared by all texture families."""

    stripe_period: tuple = (7.0, 11.0)
    checker_period: tuple = (10.0, 16.0)
    dot_period: tuple = (10.0, 14.0)
    grid_period: tuple = (9.0, 13.0)
    ring_period: tuple = (8.0, 12.0)
    blob_cycles: tuple = (1.5, 3.0)
    grain_cycles: tuple = (4.5, 7.5)
    zigzag_amp: tuple = (2.5, 4.5)
    contrast_range: tuple = (0.55, 1.0)


def _pixel_grid(size):
    c = np.arange(size, dtype=np.float64) + 0.5
    return np.meshgrid(c, c, indexing="ij")  # (yy, xx)


def _rotate(yy, xx, cy, cx, angle):
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    return dy * ca - dx * sa, dy * sa + dx * ca


# ---------------------------------------------------------------------------
# shape masks


def draw_shape_geometry(family, size, rng, params=ShapeParams()):
    """Sample the per-image geometry dict for one shape family."""
    lo, hi = params.radius_range
    j = params.center_jitter
    scale = _AREA_NORM[family] * size / 64.0
    geom = {
        "cy": size / 2 + rng.uniform(-j, j),
        "cx": size / 2 + rng.uniform(-j, j),
        "radius": rng.uniform(lo, hi) * scale,
        "angle": rng.uniform(0.0, 2 * np.pi),
    }
    if family == 5:  # star
        geom["inner"] = rng.uniform(0.40, 0.50)
    elif family == 6:  # ellipse
        geom["ratio"] = rng.uniform(0.50, 0.68)
    elif family == 7:  # annulus
        geom["inner"] = rng.uniform(0.50, 0.62)
    elif family == 8:  # cross
        geom["arm"] = rng.uniform(0.28, 0.36)
    elif family == 9:  # crescent
        geom["bite_r"] = rng.uniform(0.78, 0.90)
        geom["bite_off"] = rng.uniform(0.62, 0.80)
    return geom


def shape_mask(family, size, geom):
    """Boolean [size, size] silhouette for one family and geometry."""
    yy, xx = _pixel_grid(size)
    cy, cx, radius, angle = geom["cy"], geom["cx"], geom["radius"], geom["angle"]
    ry, rx = _rotate(yy, xx, cy, cx, angle)
    r = np.hypot(ry, rx)
    theta = np.arctan2(ry, rx)

    if family in (0, 1, 2, 3, 4):  # regular polygon, 3..7 vertices
        n = family + 3
        sector = np.mod(theta, 2 * np.pi / n) - np.pi / n
        edge = radius * np.cos(np.pi / n) / np.cos(sector)
        return r <= edge
    if family == 5:  # star: radius oscillates between outer and inner
        t = np.mod(5 * theta / (2 * np.pi), 1.0)
        inner = geom["inner"] * radius
        edge = inner + (radius - inner) * np.abs(1.0 - 2.0 * t)
        return r <= edge
    if family == 6:  # ellipse
        b = geom["ratio"] * radius
        return (rx / radius) ** 2 + (ry / b) ** 2 <= 1.0
    if family == 7:  # annulus
        return (r <= radius) & (r >= geom["inner"] * radius)
    if family == 8:  # cross
        w = geom["arm"] * radius
        return ((np.abs(rx) <= w) & (np.abs(ry) <= radius)) | (
            (np.abs(ry) <= w) & (np.abs(rx) <= radius)
        )
    if family == 9:  # crescent: disc minus an offset bite
        bite = np.hypot(ry, rx - geom["bite_off"] * radius) <= geom["bite_r"] * radius
        return (r <= radius) & ~bite
    raise ValueError(f"unknown shape family {family}")


# ---------------------------------------------------------------------------
# texture patterns


def _soft(s, gain=3.0):
    """Squash a signed signal into [0, 1] with a saturating ramp."""
    return 0.5 + 0.5 * np.clip(s * gain, -1.0, 1.0)


def _stripe_pattern(size, period, angle, phase):
    yy, xx = _pixel_grid(size)
    coord = yy * np.cos(angle) + xx * np.sin(angle)
    return _soft(np.sin(2 * np.pi * coord / period + phase))


def _band_noise(size, cycles, rng, waves=8):
    yy, xx = _pixel_grid(size)
    acc = np.zeros((size, size))
    for _ in range(waves):
        f = rng.uniform(*cycles) / size
        ang = rng.uniform(0, 2 * np.pi)
        ph = rng.uniform(0, 2 * np.pi)
        acc += np.sin(2 * np.pi * f * (yy * np.cos(ang) + xx * np.sin(ang)) + ph)
    return _soft(acc / np.sqrt(waves), gain=2.0)


def draw_texture_geometry(family, size, rng, params=TextureParams()):
    """Sample per-image pattern parameters for one texture family."""
    geom = {"phase": rng.uniform(0, 2 * np.pi), "contrast": rng.uniform(*params.contrast_range)}
    if family in (0, 1, 9):
        geom["period"] = rng.uniform(*params.stripe_period)
    if family == 2:
        geom["period"] = rng.uniform(*params.stripe_period)
        geom["angle"] = np.pi / 4 + rng.uniform(-0.1, 0.1)
    if family == 0:
        geom["angle"] = rng.uniform(-0.06, 0.06)
    if family == 1:
        geom["angle"] = np.pi / 2 + rng.uniform(-0.06, 0.06)
    if family == 3:
        geom["period"] = rng.uniform(*params.checker_period)
        geom["off"] = rng.uniform(0, geom["period"], size=2)
    if family == 4:
        geom["period"] = rng.uniform(*params.dot_period)
        geom["off"] = rng.uniform(0, geom["period"], size=2)
        geom["dot_r"] = rng.uniform(0.24, 0.32)
    if family == 5:
        geom["period"] = rng.uniform(*params.grid_period)
        geom["off"] = rng.uniform(0, geom["period"], size=2)
        geom["line_w"] = rng.uniform(0.12, 0.18)
    if family == 6:
        geom["period"] = rng.uniform(*params.ring_period)
        geom["center"] = rng.uniform(0.25 * size, 0.75 * size, size=2)
    if family == 7:
        geom["seedseq"] = rng.integers(0, 2**31)
    if family == 8:
        geom["seedseq"] = rng.integers(0, 2**31)
    if family == 9:
        geom["amp"] = rng.uniform(*params.zigzag_amp)
        geom["zper"] = rng.uniform(9.0, 15.0)
    return geom


def texture_pattern(family, size, geom, params=TextureParams()):
    """Scalar pattern in [0, 1] for one family and geometry."""
    yy, xx = _pixel_grid(size)
    if family in (0, 1, 2):
        return _stripe_pattern(size, geom["period"], geom["angle"], geom["phase"])
    if family == 3:
        p = geom["period"]
        sy = np.sin(2 * np.pi * (yy - geom["off"][0]) / p)
        sx = np.sin(2 * np.pi * (xx - geom["off"][1]) / p)
        return _soft(sy * sx, gain=6.0)
    if family == 4:
        p = geom["period"]
        dy = np.abs(np.mod(yy - geom["off"][0], p) - p / 2)
        dx = np.abs(np.mod(xx - geom["off"][1], p) - p / 2)
        return _soft(geom["dot_r"] * p - np.hypot(dy, dx), gain=2.0)
    if family == 5:
        p = geom["period"]
        dy = np.abs(np.mod(yy - geom["off"][0], p) - p / 2)
        dx = np.abs(np.mod(xx - geom["off"][1], p) - p / 2)
        near = np.minimum(dy, dx)
        return _soft(near - (0.5 - geom["line_w"]) * p, gain=2.0)
    if family == 6:
        r = np.hypot(yy - geom["center"][0], xx - geom["center"][1])
        return _soft(np.sin(2 * np.pi * r / geom["period"] + geom["phase"]))
    if family == 7:
        return _band_noise(size, params.blob_cycles, np.random.default_rng(geom["seedseq"]))
    if family == 8:
        return _band_noise(size, params.grain_cycles, np.random.default_rng(geom["seedseq"]))
    if family == 9:
        tri = np.abs(np.mod(xx / geom["zper"], 1.0) - 0.5) * 2.0
        coord = yy + geom["amp"] * tri
        return _soft(np.sin(2 * np.pi * coord / geom["period"] + geom["phase"]))
    raise ValueError(f"unknown texture family {family}")


def draw_palette(family, rng):
    """Foreground/background RGB pair from the family's hue band."""
    lo, hi = _HUE_BANDS[family]
    hue = rng.uniform(lo, hi)
    fg = colorsys.hsv_to_rgb(hue % 1.0, rng.uniform(0.60, 0.90), rng.uniform(0.60, 0.90))
    bg = colorsys.hsv_to_rgb(
        (hue + rng.uniform(-0.02, 0.02)) % 1.0, rng.uniform(0.15, 0.35), rng.uniform(0.25, 0.45)
    )
    return np.array(fg, dtype=np.float64), np.array(bg, dtype=np.float64)


def render_texture_image(family, size, rng, params=TextureParams()):
    """Full-frame texture image [3, size, size] in [0, 1]."""
    geom = draw_texture_geometry(family, size, rng, params)
    pal_fg, pal_bg = draw_palette(family, rng)
    pattern = texture_pattern(family, size, geom, params)
    pattern = 0.5 + geom["contrast"] * (pattern - 0.5)
    img = pal_bg[:, None, None] + pattern[None] * (pal_fg - pal_bg)[:, None, None]
    return np.clip(img, 0.0, 1.0)


def render_background(size, rng):
    """Plain light background with small per-sample brightness/tint jitter."""
    hue = rng.uniform(0.0, 1.0)
    val = rng.uniform(0.72, 0.92)
    sat = rng.uniform(0.0, 0.06)
    rgb = colorsys.hsv_to_rgb(hue, sat, val)
    return np.broadcast_to(np.array(rgb)[:, None, None], (3, size, size)).copy()


def render_sample(shape_family, texture_family, size, rng, shape_params=ShapeParams(),
                  texture_params=TextureParams(), noise_sigma=(0.01, 0.03)):
    """One image: silhouette of ``shape_family`` filled with ``texture_family``.

    Returns ``(pixels [3,size,size] float32, mask [size,size] bool)``.
    """
    geom = draw_shape_geometry(shape_family, size, rng, shape_params)
    mask = shape_mask(shape_family, size, geom)
    tex = render_texture_image(texture_family, size, rng, texture_params)
    img = render_background(size, rng)
    img[:, mask] = tex[:, mask]
    sigma = rng.uniform(*noise_sigma)
    img += rng.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask
