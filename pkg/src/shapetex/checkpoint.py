"""Binary checkpoint files (magic "DBTX").

Layout, all integers little-endian:

    magic     4 bytes  "DBTX"
    version   u16      format version (currently 1)
    crc32     u32      CRC-32 of everything after this field
    payload:
      meta_len  u32    length of the UTF-8 JSON metadata block
      metadata  bytes  JSON object (architecture, flags, strategy, ...)
      count     u32    number of tensor entries
      entries:
        name_len u16   UTF-8 name length
        name     bytes
        dtype    u8    0 = float32, 1 = float64
        rank     u8
        dims     u32 * rank
        data     raw little-endian values, row-major

Round trips are bitwise: loading returns exactly the arrays saved.  A wrong
magic, version, or checksum fails loudly; nothing is silently migrated.
"""

import json
import struct
import zlib

import numpy as np

from .errors import CheckpointError
from .model import DebiasNet
from .stylizer import EncoderDecoder

MAGIC = b"DBTX"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(path, named_tensors, metadata):
    """Write a name -> array mapping plus a JSON metadata dict."""
    parts = []
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(named_tensors)))
    for name, arr in named_tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
        f.write(payload)


def load_checkpoint(path):
    """Read a checkpoint; returns (named_tensors, metadata)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (expected {VERSION})")
    (crc,) = struct.unpack_from("<I", blob, 6)
    payload = blob[10:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")

    pos = 0
    (meta_len,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    metadata = json.loads(payload[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    named = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos : pos + name_len].decode("utf-8")
        pos += name_len
        tag, rank = struct.unpack_from("<BB", payload, pos)
        pos += 2
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype tag {tag}")
        dims = struct.unpack_from(f"<{rank}I", payload, pos)
        pos += 4 * rank
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(dims)) * dtype.itemsize if rank else dtype.itemsize
        arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(dims)) if rank else 1, offset=pos)
        named[name] = arr.reshape(dims).copy()
        pos += nbytes
    return named, metadata


def save_model(path, net, extra_metadata=None):
    """Persist a DebiasNet with enough metadata to rebuild it."""
    metadata = {
        "kind": "debiasnet",
        "num_classes": net.num_classes,
        "share_affine": net.share_affine,
        "seed": net.seed,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    save_checkpoint(path, net.named_tensors(), metadata)


def load_model(path):
    """Rebuild a DebiasNet from a checkpoint; returns (net, metadata)."""
    named, metadata = load_checkpoint(path)
    if metadata.get("kind") != "debiasnet":
        raise CheckpointError(f"{path}: not a model checkpoint (kind={metadata.get('kind')!r})")
    net = DebiasNet(
        num_classes=int(metadata["num_classes"]),
        seed=int(metadata.get("seed", 0)),
        share_affine=bool(metadata["share_affine"]),
    )
    net.load_named_tensors(named)
    return net, metadata


def save_codec(path, codec, extra_metadata=None):
    metadata = {"kind": "codec", "seed": codec.seed, "training_loss": codec.training_loss}
    if extra_metadata:
        metadata.update(extra_metadata)
    save_checkpoint(path, codec.named_tensors(), metadata)


def load_codec(path):
    named, metadata = load_checkpoint(path)
    if metadata.get("kind") != "codec":
        raise CheckpointError(f"{path}: not a codec checkpoint (kind={metadata.get('kind')!r})")
    codec = EncoderDecoder(seed=int(metadata.get("seed", 0)))
    codec.load_named_tensors(named)
    codec.training_loss = metadata.get("training_loss")
    return codec, metadata
