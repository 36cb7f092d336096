"""Binary PPM (P6, 8-bit) image files: the package's only pixel format."""

import numpy as np

from .errors import DimensionError


def write_ppm(path, image):
    """Write a [3, H, W] float image in [0, 1] as P6 with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"write_ppm: expected [3, H, W], got {image.shape}")
    h, w = image.shape[1], image.shape[2]
    raw = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(raw.transpose(1, 2, 0).tobytes())


def read_ppm(path):
    """Read a P6 file into a float32 [3, H, W] array scaled to [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; pixel data starts after the single byte of
    # whitespace that terminates maxval.
    if not blob.startswith(b"P6"):
        raise DimensionError(f"read_ppm: {path} is not a P6 file")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if maxval != 255:
        raise DimensionError(f"read_ppm: unsupported maxval {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=pos)
    return (data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / 255.0)
