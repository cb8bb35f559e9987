"""Versioned binary checkpoints of named float64 tensors.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"SGNCKPT\\0"
    version    u32       FORMAT_VERSION
    digest     32 bytes  SHA-256 of the canonical network spec
    meta_len   u32
    meta       meta_len bytes of UTF-8 JSON (step, epoch, seed, config, spec, ...)
    count      u32       number of tensors
    count x {
        name_len u16, name (UTF-8)
        ndim     u8,  dims (u64 x ndim)
        data     float64 x prod(dims), C order
    }
    checksum   32 bytes  SHA-256 of every preceding byte

Tensor names are prefixed ``param/``, ``buffer/`` (batch-norm statistics) or
``velocity/`` (optimizer momentum).
"""

from __future__ import annotations

import datetime
import hashlib
import io
import json
import struct

import numpy as np

from .errors import CheckpointError
from .optim import OptState

MAGIC = b"SGNCKPT\0"
FORMAT_VERSION = 1


def encode(digest_hex, meta, tensors):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(bytes.fromhex(digest_hex))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d arrays 0-d
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def decode(blob):
    """Return ``(digest_hex, meta, tensors)``; raises CheckpointError on any defect."""
    if len(blob) < 8 + 4 + 32 + 32 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, checksum = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise CheckpointError("checkpoint checksum mismatch (file truncated or corrupted)")
    view = memoryview(body)
    pos = 8
    (version,) = struct.unpack_from("<I", view, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = bytes(view[pos:pos + 32]).hex()
    pos += 32
    (meta_len,) = struct.unpack_from("<I", view, pos)
    pos += 4
    meta = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    return digest, meta, tensors


def save_checkpoint(path, model, state, meta=None):
    tensors = {}
    bn_names = {n for n, _ in model.batchnorm_states()}
    for name, arr in model.state_dict().items():
        is_buffer = any(name == b + suffix for b in bn_names for suffix in (".running_mean", ".running_var", ".batches_seen"))
        tensors[("buffer/" if is_buffer else "param/") + name] = arr
    for name, v in state.velocity.items():
        tensors["velocity/" + name] = v
    full_meta = {
        "step": state.step,
        "epoch": state.epoch,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "spec": model.spec.to_dict(),
    }
    full_meta.update(meta or {})
    blob = encode(model.spec.digest(), full_meta, tensors)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from exc
    return decode(blob)


def load_checkpoint(path, model):
    """Restore ``model`` in place and return ``(OptState, meta)``.

    The checkpoint's spec digest must equal ``model.spec.digest()``.
    """
    digest, meta, tensors = read_checkpoint(path)
    if digest != model.spec.digest():
        raise CheckpointError(
            f"{path}: network digest {digest[:12]}... does not match model {model.spec.digest()[:12]}..."
        )
    state = {}
    velocity = {}
    for name, arr in tensors.items():
        kind, _, key = name.partition("/")
        if kind in ("param", "buffer"):
            state[key] = arr
        elif kind == "velocity":
            velocity[key] = arr
        else:
            raise CheckpointError(f"{path}: unknown tensor section {kind!r}")
    model.load_state_dict(state)
    return OptState(velocity=velocity, step=int(meta["step"]), epoch=int(meta["epoch"])), meta
